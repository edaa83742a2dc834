#!/usr/bin/env python3
"""
Download MNIST and CIFAR archives into a dataset root.

Layout produced (what the loaders look for):
  <root>/mnist/*-ubyte.gz
  <root>/cifar-10-batches-bin/
  <root>/cifar-100-binary/
"""
import argparse
import sys
import tarfile
from pathlib import Path

import requests

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.data.datasets import CIFAR_SUBDIRS, MNIST_FILES, MNIST_SUBDIR  # noqa: E402
from src.utils.logger import get_logger  # noqa: E402

logger = get_logger("src.scripts.download")

MNIST_BASE_URL = "https://storage.googleapis.com/cvdf-datasets/mnist/"
CIFAR_URLS = {
    10: "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz",
    100: "https://www.cs.toronto.edu/~kriz/cifar-100-binary.tar.gz",
}
CHUNK_SIZE = 1 << 20


def download(url: str, target: Path) -> Path:
    """Stream ``url`` to ``target`` unless it already exists."""
    if target.exists():
        logger.info("Already downloaded", path=str(target))
        return target
    target.parent.mkdir(parents=True, exist_ok=True)
    partial = target.with_suffix(target.suffix + ".part")
    logger.info("Downloading", url=url)
    with requests.get(url, stream=True, timeout=60) as response:
        response.raise_for_status()
        with open(partial, "wb") as f:
            for chunk in response.iter_content(chunk_size=CHUNK_SIZE):
                f.write(chunk)
    partial.replace(target)
    return target


def fetch_mnist(root: Path) -> None:
    for name in MNIST_FILES.values():
        download(f"{MNIST_BASE_URL}{name}.gz", root / MNIST_SUBDIR / f"{name}.gz")


def fetch_cifar(root: Path, variant: int) -> None:
    if (root / CIFAR_SUBDIRS[variant]).is_dir():
        logger.info("Already extracted", dataset=f"cifar{variant}")
        return
    archive = download(CIFAR_URLS[variant], root / Path(CIFAR_URLS[variant]).name)
    with tarfile.open(archive, "r:gz") as tar:
        for member in tar.getmembers():
            if member.name.startswith("/") or ".." in Path(member.name).parts:
                raise ValueError(f"Unsafe path in archive: {member.name}")
        tar.extractall(root)
    logger.info("Extracted", dataset=f"cifar{variant}", directory=str(root / CIFAR_SUBDIRS[variant]))


def main() -> int:
    parser = argparse.ArgumentParser(description="Download datasets used by augcl")
    parser.add_argument("--root", default="data", help="Dataset root (default: data)")
    parser.add_argument(
        "datasets", nargs="*", default=["mnist"], choices=["mnist", "cifar10", "cifar100"],
        help="Datasets to fetch (default: mnist)",
    )
    args = parser.parse_args()
    root = Path(args.root)

    try:
        for name in args.datasets:
            if name == "mnist":
                fetch_mnist(root)
            else:
                fetch_cifar(root, int(name.removeprefix("cifar")))
    except (requests.RequestException, OSError, tarfile.TarError, ValueError) as e:
        logger.error(f"Download failed: {e}")
        return 1

    print(f"✅ Datasets ready under {root}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
