from setuptools import setup, find_packages

setup(
    name="kolseries",
    version="0.1",
    author="felixajwndqw",
    description="Series and Girsanov estimators for Kolmogorov equations of drifted OU processes",
    packages=find_packages(exclude=["tests"]),
    py_modules=["experiment", "utils"],
    python_requires=">=3.8",
    install_requires=[
        "torch",
        "numpy",
        "pydantic>=2",
        "scipy",
    ],
    extras_require={
        "test": ["pytest"],
    },
)
