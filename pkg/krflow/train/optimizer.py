import numpy as np


class AdamState:
    r"""Moment estimates of the ADAM optimizer, aligned with a model's parameter registry

    .. math::

        m_t = \beta_1 m_{t-1} + (1 - \beta_1) g_t, \quad v_t = \beta_2 v_{t-1} + (1 - \beta_2) g_t^2

        \theta_t = \theta_{t-1} - lr \frac{m_t / (1 - \beta_1^t)}{\sqrt{v_t / (1 - \beta_2^t)} + \epsilon}

    Parameters
    ----------
    n_params : int
        Length of the flat parameter vector
    lr : float, optional
        Learning rate, fixed. Default is 1e-3
    beta1 : float, optional
        Default is 0.9
    beta2 : float, optional
        Default is 0.999
    eps : float, optional
        Default is 1e-8
    """
    def __init__(self, n_params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ValueError('lr must be positive')
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ValueError('beta1 and beta2 must be in [0, 1)')
        if eps <= 0:
            raise ValueError('eps must be positive')
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.m = np.zeros(int(n_params))
        self.v = np.zeros(int(n_params))
        self.step = 0

    def to_dict(self):
        return {'lr': self.lr, 'beta1': self.beta1, 'beta2': self.beta2, 'eps': self.eps, 'step': self.step,
                'm': self.m.copy(), 'v': self.v.copy()}

    @classmethod
    def from_dict(cls, d):
        state = cls(len(d['m']), d['lr'], d['beta1'], d['beta2'], d['eps'])
        state.m = np.asarray(d['m'], dtype=np.float64).copy()
        state.v = np.asarray(d['v'], dtype=np.float64).copy()
        if state.m.shape != state.v.shape:
            raise ValueError('ADAM moments have different lengths')
        state.step = int(d['step'])
        return state


def adam_step(state, params, grads):
    """One bias-corrected ADAM update. The moments of state are updated in place

    Parameters
    ----------
    state : AdamState
        Optimizer state
    params : numpy.ndarray
        Flat parameter vector
    grads : numpy.ndarray
        Flat gradient, same length

    Returns
    -------
    numpy.ndarray
        Updated parameter vector
    """
    if params.shape != state.m.shape or grads.shape != state.m.shape:
        raise ValueError('parameters, gradient and optimizer state have different lengths')
    state.step += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1 - state.beta2) * grads ** 2
    m_hat = state.m / (1 - state.beta1 ** state.step)
    v_hat = state.v / (1 - state.beta2 ** state.step)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
