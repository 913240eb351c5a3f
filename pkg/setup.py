from setuptools import find_packages, setup

with open("README.rst") as readme_file:
    readme = readme_file.read()

with open("requirements.txt") as requirements_file:
    requirements = [item.strip() for item in requirements_file.readlines() if item.strip()]

with open("classifiers.txt") as classifiers_file:
    classifiers = [item.strip() for item in classifiers_file.readlines() if item.strip()]

setup_requirements = ["pytest-runner", "flake8"]

test_requirements = ["coverage", "pytest", "pytest-cov", "pytest-mock"]

setup(
    classifiers=classifiers,
    description="Discounted Hamilton-Jacobi solutions, Aubry sets and attractors on flat tori",
    entry_points={
        "console_scripts": [
            "weakkam=weakkam.cli:main",
        ]
    },
    install_requires=requirements,
    extras_require={"test": test_requirements},
    license="GNU General Public License v3",
    long_description=readme,
    keywords="hamilton-jacobi, weak kam, viscosity solutions, lax-oleinik, python",
    name="weakkam",
    packages=find_packages(include=["weakkam*"]),
    setup_requires=setup_requirements,
    test_suite="tests",
    tests_require=test_requirements,
    version="0.1.0",
    zip_safe=False,
    python_requires=">=3.8",
)
