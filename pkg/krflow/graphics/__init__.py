from .graphics import (scatter_plot,
                       save_scatter_svg,
                       loss_plot,
                       dof_plot)
