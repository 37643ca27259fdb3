from pathlib import Path

from setuptools import find_packages, setup

requirements = [
    line.split("#")[0].strip()
    for line in Path(__file__).with_name("requirements.txt").read_text().splitlines()
    if line.split("#")[0].strip() and not line.startswith("pytest")
]

setup(
    name="stokes_recon",
    version="0.1.0",
    description="Pressure-robust Taylor-Hood and mini element solvers with divergence-free velocity reconstruction",
    packages=find_packages(include=["stokes_recon", "stokes_recon.*"]),
    python_requires=">=3.9",
    install_requires=requirements,
    entry_points={"console_scripts": ["stokesrec = stokes_recon.cli:main"]},
)
