import pytest

from habclass.synthetic import write_shape_image_tree


@pytest.fixture(scope="session")
def tiny_tree(tmp_path_factory):
    """2-class on-disk PNG tree: alpha has 8 images, beta has 12."""
    root = tmp_path_factory.mktemp("tiny_data")
    return write_shape_image_tree(root, {"alpha": 8, "beta": 12}, image_size=48, seed=7)
