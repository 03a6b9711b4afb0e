from setuptools import setup, find_packages

setup(
    name='countcast',
    version='0.1.0',
    long_description='Forecasting, backtesting and model comparison for sparse hierarchical event-count panels',
    packages=find_packages(exclude=['tests']),
    include_package_data=True,
    zip_safe=False,
    python_requires='>=3.8',
    entry_points={
        'console_scripts': [
            'countcast = countcast.cli:cli'
        ]
    },
    install_requires=[
        'click',
        'pyyaml',
        'numpy>=1.20',
        'pandas>=1.5',
        'scipy>=1.7',
        'matplotlib>=3.3',
        'scikit-learn>=1.1',
        'statsmodels>=0.12'
    ],
    extras_require={
        'test': ['pytest']
    }
)
