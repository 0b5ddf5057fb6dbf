import io
import os
import re

from setuptools import find_packages
from setuptools import setup


def read(filename):
    filename = os.path.join(os.path.dirname(__file__), filename)
    text_type = type(u"")
    with io.open(filename, mode="r", encoding='utf-8') as fd:
        return re.sub(text_type(r':[a-z]+:`~?(.*?)`'), text_type(r'``\1``'), fd.read())


def version():
    with io.open(os.path.join(os.path.dirname(__file__), 'pse', '__init__.py'), encoding='utf-8') as fd:
        return re.search(r"^__version__ = ['\"]([^'\"]*)['\"]", fd.read(), re.M).group(1)


setup(
    name="py-pse",
    version=version(),
    license='GNU General Public License v3 (GPLv3)',

    description="Personalized speech enhancement toolkit: dynamic acoustic compensation, TF-loss and adaptive "
                "focal training on a small speaker conditioned mask estimator.",
    long_description_content_type="text/markdown",
    long_description=read("README.md"),
    packages=find_packages(exclude=('tests', 'workdir')),

    install_requires=[
        "numpy",  # all signal and model arithmetic
        "scipy"  # window functions, the exponential integral of MMSE-LSA, wav io
    ],
    entry_points={
        'console_scripts': ['pse=pse.cli:run'],
    },

    classifiers=[
        'Development Status :: 3 - Alpha',
        'License :: OSI Approved :: GNU General Public License v3 (GPLv3)',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
        'Natural Language :: English',
        'Topic :: Multimedia :: Sound/Audio :: Speech',
        'Topic :: Scientific/Engineering :: Artificial Intelligence'
    ],
)
