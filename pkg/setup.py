from setuptools import setup

exec(compile(open('krflow/version.py').read(),
             'krflow/version.py', 'exec'))


with open("README.md") as f:
    descript = f.read()


setup(name='krflow',
      version=__version__,
      description='Augmented KRnet normalizing flows for density estimation and approximation',
      keywords='normalizing-flow KRnet Knothe-Rosenblatt real-NVP neural-ODE adjoint density-estimation',
      packages=['krflow',
                'krflow.calc',
                'krflow.layers',
                'krflow.flow',
                'krflow.gradients',
                'krflow.datasets',
                'krflow.train',
                'krflow.graphics',
                'krflow.cli'],
      include_package_data=True,
      license='MIT',
      classifiers=['Programming Language :: Python :: 3.7',
                   'Programming Language :: Python :: 3.8',
                   'Programming Language :: Python :: 3.9'],
      install_requires=['pandas>=1.3',
                        'numpy>=1.17',
                        'statsmodels>=0.10.0',
                        'matplotlib>=3.0',
                        'scipy>=1.4',
                        'tabulate'],
      entry_points={'console_scripts': ['krflow=krflow.cli:main']},
      long_description=descript,
      long_description_content_type="text/markdown",
      )
