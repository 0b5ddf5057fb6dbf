"""
Module containing functions for resolving the file references of a manifest.
Every path inside a manifest is stored relative to the directory of the manifest file.
"""
import os


def resolve_path(base_dir: str, relative_path: str) -> str:
    """
    Returns the absolute path of a file referenced from a manifest.
    i.e
    base_dir is '/data/sim/manifest.jsonl' (or the directory '/data/sim')
    relative_path: './noisy/0001.wav'
        the function would resolve the path to: /data/sim/noisy/0001.wav

    if the relative_path is already absolute, the function will just return it (normalized)
    @param base_dir: directory of the manifest, or the manifest file itself
    @param relative_path:
    @return:
    """
    relative_path = str(relative_path).replace('\\', '/')
    if os.path.isabs(relative_path): return os.path.normpath(relative_path)

    # remove redundant characters in the relative path
    if relative_path.startswith('./'): relative_path = relative_path[2:]

    base_dir = str(base_dir)
    # check if the base_dir was really a path to a directory or a file
    if os.path.isfile(base_dir) or base_dir.endswith('.jsonl') or base_dir.endswith('.json'):
        base_dir = os.path.dirname(base_dir)
    return os.path.normpath(os.path.join(base_dir, relative_path))
