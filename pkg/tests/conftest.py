import numpy as np
import pytest
import torch

torch.set_num_threads(1)


def central_difference(f, tensor: torch.Tensor, index, step: float = 1e-5) -> float:
    """d f / d tensor[index] by central differences, tensor perturbed in place."""
    with torch.no_grad():
        orig = tensor[index].item()
        tensor[index] = orig + step
        up = float(f())
        tensor[index] = orig - step
        down = float(f())
        tensor[index] = orig
    return (up - down) / (2 * step)


def fd_check(f, params: dict, coords_per_tensor: int = 6, seed: int = 0, step: float = 1e-5):
    """Compare autograd against central differences on a sample of coordinates of every tensor.

    Returns {name: (relative error, max |fd|)}; relative error is ||g - fd|| / max(||g||, ||fd||).
    """
    for p in params.values():
        p.grad = None
    out = f()
    out.backward()
    rng = np.random.default_rng(seed)
    report = {}
    for name, p in params.items():
        flat_n = p.numel()
        picks = rng.choice(flat_n, size=min(coords_per_tensor, flat_n), replace=False)
        g, fd = [], []
        for flat in picks:
            idx = np.unravel_index(int(flat), tuple(p.shape))
            g.append(p.grad[idx].item() if p.grad is not None else 0.0)
            with torch.no_grad():
                fd.append(central_difference(lambda: f().detach(), p.data, idx, step))
        g, fd = np.array(g), np.array(fd)
        denom = max(np.linalg.norm(g), np.linalg.norm(fd))
        report[name] = (0.0 if denom < 1e-12 else float(np.linalg.norm(g - fd) / denom), float(np.abs(fd).max()))
    return report


@pytest.fixture
def double():
    prev = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(prev)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
