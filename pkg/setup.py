from setuptools import setup, find_packages


def readme():
    with open('README.md') as f:
        return f.read()


def get_requirements():
    """
    Lists the pinned runtime requirements, skipping blank lines and comments.
    """
    try:
        with open('requirements.txt') as f:
            lines = [line.strip() for line in f.read().splitlines()]
    except OSError:
        raise Exception("Error parsing requirements.txt. Check its availability.")
    return [line for line in lines if line and not line.startswith("#")]


setup(
    name='boxcert',
    version='0.1.0',
    license='MIT',
    description='Boxcert corrects and certifies stereo box pose and shape estimates for pseudo-labelling.',
    long_description=readme(),
    long_description_content_type="text/markdown",
    entry_points = {
            'console_scripts': ['boxcert=boxcert.cli:main']
    },
    package_dir={"": "src"},
    packages=find_packages(where="src"),
    python_requires=">=3.9",
    install_requires=get_requirements(),
    zip_safe=False
)
