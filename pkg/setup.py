from setuptools import setup, find_packages

with open("README.rst", "r") as f:
    long_description = f.read()

version = {}
with open("flapguard/_version.py", "r") as f:
    exec(f.read(), version)

NAME = "flapguard"
VERSION = version["__version__"]
DESCRIPTION = (
    "Flapguard computes per-node hourly alert thresholds for MAC-flap "
    "events, whitelists chronically flapping nodes and evaluates alerts "
    "against support cases."
)
INSTALL_REQUIRES = [
    "pyarrow >= 12.0.0",
    "numpy >= 1.19.0",
    "tomli >= 1.1.0; python_version < '3.11'",
]

setup(
    name=NAME,
    version=VERSION,
    description=DESCRIPTION,
    long_description=long_description,
    long_description_content_type="text/x-rst",
    keywords=["network", "monitoring", "alerting", "anomaly detection"],
    packages=find_packages(exclude=["flapguard.tests"]),
    python_requires=">=3.8",
    install_requires=INSTALL_REQUIRES,
    entry_points={
        "console_scripts": [
            "flapguard = flapguard.cli.main:main",
        ],
    },
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Environment :: Console",
        "Operating System :: OS Independent",
        "Intended Audience :: System Administrators",
        "Programming Language :: Python",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.11",
        "Topic :: System :: Networking :: Monitoring",
    ],
    zip_safe=False,
)
