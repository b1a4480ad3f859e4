"rfncsc installation script"

import setuptools  # type: ignore

setuptools.setup(
    name="rfncsc",
    version="0.1",
    description="Receptive field normalization sparse coding for seismic traces",
    platforms="any",
    packages=setuptools.find_packages(),
    install_requires=[
        "argcomplete",
        "numpy>=2.2.6",
        "scipy>=1.6",
        "tabulate>=0.8.5",
    ],
    extras_require={
        "color": ["rainbow_logging_handler"],
        "tests": ["pytest>=6"],
    },
    entry_points={
        "console_scripts": [
            "rfncsc=rfncsc.__main__:main",
        ]
    },
)
