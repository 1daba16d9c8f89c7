"""Task orchestration: training runs, dual-path benchmarks, unitary fits,
gradient checks, and metrics emission.

Metrics stream format (append-only, flushed per row, parseable mid-run):

    # <key> = <value>          effective config echo, one line per key
    epoch,step,split,loss,accuracy,elapsed_sec
    0,0,test,2.3025,0.101,0.41
    0.1,60,train,...

Train rows land every tenth of an epoch (windowed means), test rows at
epoch boundaries plus one before training starts.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .data import MnistDataset, flatten_sequence, load_mnist_idx, synthesize_digits
from .engine import (
    PhaseGradients,
    apply_phase_step,
    dense_complex_backward,
    finite_difference_gradient,
    fused_backward_sweep,
    tape_forward_backward,
)
from .mesh import BasicUnit, SweepWorkspace, build_mesh, forward_sweep
from .rnn import (
    EpisodeTrace,
    RmsProp,
    RnnConfig,
    RnnModel,
    evaluate,
    modrelu,
    modrelu_backward,
    power_backward,
    power_forward,
    softmax_cross_entropy,
    train_step,
)

__all__ = [
    "BenchmarkRecord",
    "GradcheckReport",
    "MetricsWriter",
    "RunConfig",
    "TrainResult",
    "fit_unitary_task",
    "gradcheck_suite",
    "load_training_data",
    "random_unitary",
    "run_benchmark",
    "run_training",
    "write_benchmark_csv",
]

BENCH_HEADER = "path,n,L,batch,threads,iters,mean_sec,std_sec"
METRICS_HEADER = "epoch,step,split,loss,accuracy,elapsed_sec"

# standard IDX file names looked up under --data-dir, gzipped or not
_IDX_NAMES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass
class RunConfig:
    """Everything one training run needs beyond the model itself."""

    model: RnnConfig = field(default_factory=RnnConfig)
    downsample: int = 2
    path: str = "fused"  # hidden-unit gradient route: fused | tape
    data_dir: str | None = None
    synthetic_train: int = 60000
    synthetic_test: int = 10000
    data_seed: int = 12345
    timer: str = "wall"  # wall | off
    threads: int = 8

    def __post_init__(self) -> None:
        if self.path not in ("fused", "tape"):
            raise ValueError(f"path must be 'fused' or 'tape', got {self.path!r}")
        if self.timer not in ("wall", "off"):
            raise ValueError(f"timer must be 'wall' or 'off', got {self.timer!r}")

    def echo(self) -> dict:
        m = self.model
        return {
            "hidden": m.hidden_size,
            "output": m.output_size,
            "layers": m.fine_layers,
            "basic_unit": m.basic_unit.value,
            "with_diag": int(m.with_diag),
            "eta_in": m.eta_in,
            "eta_out": m.eta_out,
            "eta_hidden": m.eta_hidden,
            "eta_act": m.eta_act,
            "batch": m.batch_size,
            "epochs": m.epochs,
            "seed": m.seed,
            "rms_decay": m.rms_decay,
            "rms_eps": m.rms_eps,
            "downsample": self.downsample,
            "path": self.path,
            "data_dir": self.data_dir or "",
            "synthetic_train": self.synthetic_train,
            "synthetic_test": self.synthetic_test,
            "data_seed": self.data_seed,
            "timer": self.timer,
            "threads": self.threads,
        }


class MetricsWriter:
    """Writes the config echo + header, then one flushed row at a time."""

    def __init__(self, stream, config_echo: dict, clock) -> None:
        self._stream = stream
        self._clock = clock
        self.rows: list[tuple] = []
        for key, value in config_echo.items():
            stream.write(f"# {key} = {value}\n")
        stream.write(METRICS_HEADER + "\n")
        stream.flush()

    def row(self, epoch: float, step: int, split: str, loss: float, accuracy: float) -> None:
        elapsed = self._clock()
        record = (epoch, step, split, loss, accuracy, elapsed)
        self.rows.append(record)
        self._stream.write(
            f"{epoch:g},{step},{split},{loss:.9g},{accuracy:.6g},{elapsed:.6g}\n"
        )
        self._stream.flush()


def load_training_data(config: RunConfig) -> tuple[MnistDataset, MnistDataset]:
    """Real IDX pair from data_dir when present, else the synthetic corpus."""
    if config.data_dir is not None:
        import os

        out = []
        for split in ("train", "test"):
            img_name, lbl_name = _IDX_NAMES[split]
            img = lbl = None
            for suffix in ("", ".gz"):
                ip = os.path.join(config.data_dir, img_name + suffix)
                lp = os.path.join(config.data_dir, lbl_name + suffix)
                if os.path.exists(ip) and os.path.exists(lp):
                    img, lbl = ip, lp
                    break
            if img is None:
                raise FileNotFoundError(
                    f"no {split} IDX pair ({img_name}[.gz]) under {config.data_dir}"
                )
            out.append(load_mnist_idx(img, lbl))
        return out[0], out[1]
    train = synthesize_digits(config.synthetic_train, seed=config.data_seed)
    test = synthesize_digits(config.synthetic_test, seed=config.data_seed + 1)
    return train, test


@dataclass(eq=False)
class TrainResult:
    model: RnnModel
    rows: list[tuple]
    final_train_accuracy: float
    final_test_accuracy: float


def run_training(
    config: RunConfig,
    train: MnistDataset,
    test: MnistDataset | None = None,
    metrics_stream=None,
) -> TrainResult:
    """Train per `config`, emitting metrics rows as training progresses.

    Raises DivergenceError (metrics already flushed stay intact) when the
    loss or activations go non-finite.
    """
    mcfg = config.model
    model = RnnModel.build(mcfg)
    seq_train = flatten_sequence(train, config.downsample)
    labels_train = train.labels.astype(np.int64)
    seq_test = labels_test = None
    if test is not None:
        seq_test = flatten_sequence(test, config.downsample)
        labels_test = test.labels.astype(np.int64)

    start = time.perf_counter()
    clock = (lambda: 0.0) if config.timer == "off" else (lambda: time.perf_counter() - start)
    if metrics_stream is None:
        class _Null:
            def write(self, s):
                return len(s)

            def flush(self):
                pass

        metrics_stream = _Null()
    writer = MetricsWriter(metrics_stream, config.echo(), clock)

    batch = mcfg.batch_size
    steps_per_epoch = seq_train.shape[1] // batch
    if steps_per_epoch == 0:
        raise ValueError(
            f"batch size {batch} exceeds the {seq_train.shape[1]}-example training set"
        )
    mark_every = max(1, round(steps_per_epoch / 10))
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([mcfg.seed, 7]))

    def eval_row(epoch: float, step: int) -> float:
        if seq_test is None:
            return float("nan")
        loss, acc = evaluate(model, seq_test, labels_test, batch)
        writer.row(epoch, step, "test", loss, acc)
        return acc

    test_acc = eval_row(0.0, 0)
    trace = EpisodeTrace.allocate(model, seq_train.shape[0], batch)
    window_loss: list[float] = []
    window_correct = 0
    last_train_acc = float("nan")
    step = 0
    for epoch in range(mcfg.epochs):
        order = shuffle_rng.permutation(seq_train.shape[1])
        for k in range(steps_per_epoch):
            cols = order[k * batch : (k + 1) * batch]
            loss, n_correct = train_step(
                model,
                seq_train[:, cols],
                labels_train[cols],
                trace=trace,
                hidden_path=config.path,
            )
            step += 1
            window_loss.append(loss)
            window_correct += n_correct
            if step % mark_every == 0 or k == steps_per_epoch - 1:
                frac = epoch + (k + 1) / steps_per_epoch
                last_train_acc = window_correct / (len(window_loss) * batch)
                writer.row(
                    round(frac, 6), step, "train",
                    float(np.mean(window_loss)), last_train_acc,
                )
                window_loss.clear()
                window_correct = 0
        test_acc = eval_row(float(epoch + 1), step)
    return TrainResult(model, writer.rows, last_train_acc, test_acc)


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------

@dataclass
class BenchmarkRecord:
    """Mean/std of seconds per forward+backward+update iteration.

    `epoch_projection_sec` extrapolates to one epoch of the full-scale
    pixel-sequence task: ceil(60000 / batch) * 784 hidden-unit
    iterations (input/output units excluded).
    """

    path: str
    n: int
    fine_layers: int
    batch: int
    threads: int
    iters: int
    mean_sec: float
    std_sec: float

    @property
    def epoch_projection_sec(self) -> float:
        return self.mean_sec * math.ceil(60000 / self.batch) * 784

    def csv_row(self) -> str:
        return (
            f"{self.path},{self.n},{self.fine_layers},{self.batch},{self.threads},"
            f"{self.iters},{self.mean_sec:.9g},{self.std_sec:.9g}"
        )


def time_iterations(fn, warmup: int, iters: int) -> tuple[float, float]:
    """Per-iteration (mean, std) seconds of fn(), after discarded warmup."""
    for _ in range(warmup):
        fn()
    samples = np.empty(iters)
    for i in range(iters):
        t0 = time.perf_counter_ns()
        fn()
        samples[i] = time.perf_counter_ns() - t0
    return float(samples.mean() / 1e9), float(samples.std() / 1e9)


def run_benchmark(
    n_list=(128,),
    l_list=(4, 8, 12, 16, 20),
    batch: int = 100,
    paths=("fused", "tape"),
    iters: int = 10,
    warmup: int = 3,
    threads: int = 8,
    seed: int = 0,
    eta: float = 1e-3,
) -> list[BenchmarkRecord]:
    """Time forward+backward+update sweeps per path on synthetic data.

    Synthetic random blocks (not a real corpus) so nothing but sweep
    cost is measured.  Both paths start from identically-seeded meshes
    and step their phases with the same small eta, keeping the work
    realistic without letting the two paths' iterates interact.
    """
    if iters < 10:
        raise ValueError("benchmark needs at least 10 timed iterations")
    if warmup < 3:
        raise ValueError("benchmark needs at least 3 warmup iterations")
    records = []
    for n in n_list:
        for fine_layers in l_list:
            rng = np.random.default_rng(np.random.SeedSequence([seed, n, fine_layers]))
            x = rng.standard_normal((n, batch)) + 1j * rng.standard_normal((n, batch))
            g = rng.standard_normal((n, batch)) + 1j * rng.standard_normal((n, batch))
            for path in paths:
                mesh = build_mesh(n, fine_layers, init="uniform", seed=seed)
                grads = PhaseGradients.zeros_for(mesh)
                if path == "fused":
                    ws = SweepWorkspace.for_mesh(mesh, batch)

                    def one_iter():
                        for a in grads.arrays():
                            a[...] = 0.0
                        forward_sweep(mesh, x, out=ws.activations)
                        fused_backward_sweep(
                            mesh, ws.activations, g, grads=grads, g_buf=ws.cotangent
                        )
                        apply_phase_step(mesh, grads, eta)

                elif path == "tape":

                    def one_iter():
                        for a in grads.arrays():
                            a[...] = 0.0
                        tape_forward_backward(mesh, x, g, grads=grads)
                        apply_phase_step(mesh, grads, eta)

                else:
                    raise ValueError(f"unknown path {path!r}")
                mean, std = time_iterations(one_iter, warmup, iters)
                records.append(
                    BenchmarkRecord(path, n, fine_layers, batch, threads, iters, mean, std)
                )
    return records


def write_benchmark_csv(records, stream) -> None:
    stream.write(BENCH_HEADER + "\n")
    for rec in records:
        stream.write(rec.csv_row() + "\n")
    stream.flush()


# ---------------------------------------------------------------------------
# unitary fitting
# ---------------------------------------------------------------------------

def random_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-ish random unitary: QR of a complex Gaussian, phases fixed."""
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / math.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def _fit_loss_and_grads(mesh, target, ws, grads):
    eye = np.eye(mesh.n, dtype=complex)
    acts = forward_sweep(mesh, eye, out=ws.activations)
    diff = acts[-1] - target
    for a in grads.arrays():
        a[...] = 0.0
    fused_backward_sweep(mesh, acts, diff, grads=grads, g_buf=ws.cotangent)
    return float(np.sum(diff.real**2 + diff.imag**2)), grads


def fit_unitary_task(
    n: int,
    fine_layers: int,
    with_diag: bool,
    target_seed: int = 0,
    iters: int = 10000,
    fit_seed: int = 1,
    lr: float = 0.05,
    lr_final: float = 5e-4,
    tol: float = 0.0,
    target: np.ndarray | None = None,
    restarts: int = 1,
) -> float:
    """Fit the mesh to a random n x n unitary; returns the best Frobenius error.

    Loss is ||M - U||_F^2 with M swept on the identity.  Each start gets
    `iters` iterations; `restarts` repeats the whole schedule from fresh
    initial phases (fit_seed, fit_seed+1, ...) keeping the best error.
    When fine_layers is at the minimal count for universality the loss
    landscape has genuine local minima, so hard targets need several
    starts.  A nonzero `tol` stops the search early once some start
    reaches it.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    if target is None:
        target = random_unitary(n, np.random.default_rng(target_seed))
    best = math.inf
    for r in range(restarts):
        err = _fit_unitary_once(
            n, fine_layers, with_diag, target, iters, fit_seed + r, lr, lr_final, tol
        )
        best = min(best, err)
        if tol > 0.0 and best <= tol:
            break
    return best


def _fit_unitary_once(
    n: int,
    fine_layers: int,
    with_diag: bool,
    target: np.ndarray,
    iters: int,
    fit_seed: int,
    lr: float,
    lr_final: float,
    tol: float,
) -> float:
    """One fitting run: RMSProp exploration (60% of the budget, rate
    decaying exponentially from `lr` to `lr_final`), then Armijo
    backtracking gradient descent polishing from the best iterate."""
    mesh = build_mesh(
        n, fine_layers, with_diag=with_diag, init="uniform", seed=fit_seed
    )
    ws = SweepWorkspace.for_mesh(mesh, n)
    grads = PhaseGradients.zeros_for(mesh)
    trial_buf = PhaseGradients.zeros_for(mesh)
    opt = RmsProp(decay=0.99, eps=1e-8)
    explore = (iters * 3) // 5
    best_loss = math.inf
    best_phases = [a.copy() for a in mesh.phase_arrays()]

    def snapshot_if_best(loss):
        nonlocal best_loss
        if loss < best_loss:
            best_loss = loss
            for dst, src in zip(best_phases, mesh.phase_arrays()):
                dst[...] = src

    used = 0
    rate = lr
    gamma = (lr_final / lr) ** (1.0 / max(explore, 1))
    for _ in range(explore):
        loss, grads = _fit_loss_and_grads(mesh, target, ws, grads)
        snapshot_if_best(loss)
        used += 1
        if best_loss <= tol * tol:
            return math.sqrt(best_loss)
        for j, (arr, garr) in enumerate(zip(mesh.phase_arrays(), grads.arrays())):
            opt.update(f"p{j}", arr, garr, rate)
        rate *= gamma

    # polish: plain descent with Armijo backtracking from the best iterate
    for dst, src in zip(mesh.phase_arrays(), best_phases):
        dst[...] = src
    loss, grads = _fit_loss_and_grads(mesh, target, ws, grads)
    used += 1
    snapshot_if_best(loss)
    step = lr
    while used < iters and best_loss > tol * tol:
        gnorm2 = float(sum(float(np.sum(g * g)) for g in grads.arrays()))
        if gnorm2 == 0.0:
            break
        accepted = False
        while used < iters:
            apply_phase_step(mesh, grads, step)
            trial_loss, _ = _fit_loss_and_grads(mesh, target, ws, trial_buf)
            used += 1
            if trial_loss <= loss - 1e-4 * step * gnorm2:
                accepted = True
                break
            apply_phase_step(mesh, grads, -step)  # undo the rejected step
            step *= 0.5
            if step < 1e-18:
                break
        if not accepted:
            break
        loss = trial_loss
        snapshot_if_best(loss)
        grads, trial_buf = trial_buf, grads  # trial gradients become the direction
        step *= 2.0
    return math.sqrt(best_loss)


# ---------------------------------------------------------------------------
# gradient checks
# ---------------------------------------------------------------------------

@dataclass
class GradcheckReport:
    fused_vs_tape: float  # max relative disagreement, phase grads + input cotangent
    fused_vs_fd_rel: float
    fused_vs_fd_abs: float  # on near-zero oracle entries
    tape_vs_fd_rel: float
    tape_vs_fd_abs: float
    pointwise_rel: float  # modrelu / dense / power probes vs finite differences
    pointwise_abs: float
    instances: int

    @property
    def overall_rel(self) -> float:
        return max(
            self.fused_vs_tape, self.fused_vs_fd_rel, self.tape_vs_fd_rel, self.pointwise_rel
        )

    def passed(self, tol_rel: float = 1e-5, tol_abs: float = 1e-8, tol_paths: float = 1e-12) -> bool:
        return (
            self.fused_vs_tape <= tol_paths
            and self.fused_vs_fd_rel <= tol_rel
            and self.tape_vs_fd_rel <= tol_rel
            and self.fused_vs_fd_abs <= tol_abs
            and self.tape_vs_fd_abs <= tol_abs
            and self.pointwise_rel <= tol_rel
            and self.pointwise_abs <= tol_abs
        )

    def lines(self) -> list[str]:
        return [
            f"instances = {self.instances}",
            f"max_rel fused_vs_tape = {self.fused_vs_tape:.3e}",
            f"max_rel fused_vs_fd = {self.fused_vs_fd_rel:.3e} (abs on ~0: {self.fused_vs_fd_abs:.3e})",
            f"max_rel tape_vs_fd = {self.tape_vs_fd_rel:.3e} (abs on ~0: {self.tape_vs_fd_abs:.3e})",
            f"max_rel pointwise_vs_fd = {self.pointwise_rel:.3e} (abs on ~0: {self.pointwise_abs:.3e})",
            f"max_rel overall = {self.overall_rel:.3e}",
        ]


def _split_agreement(got: np.ndarray, oracle: np.ndarray, floor: float = 1e-8):
    """(max relative error on |oracle|>floor, max absolute error elsewhere)."""
    got = np.asarray(got, dtype=float).ravel()
    oracle = np.asarray(oracle, dtype=float).ravel()
    big = np.abs(oracle) > floor
    rel = np.abs(got[big] - oracle[big]) / np.abs(oracle[big]) if big.any() else np.zeros(1)
    ab = np.abs(got[~big] - oracle[~big]) if (~big).any() else np.zeros(1)
    return float(rel.max()), float(ab.max())


def _rel_diff(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-300)
    mask = np.maximum(np.abs(a), np.abs(b)) > 1e-12
    if not mask.any():
        return 0.0
    return float((np.abs(a - b)[mask] / denom[mask]).max())


def _quadratic_loss(mesh, x, target):
    y = forward_sweep(mesh, x)[-1]
    d = y - target
    return float(np.sum(d.real**2 + d.imag**2))


def gradcheck_suite(
    n: int = 8,
    fine_layers: int = 6,
    batch: int = 3,
    seed: int = 0,
    instances: int = 20,
    fd_step: float = 1e-6,
) -> GradcheckReport:
    """Dual-path and finite-difference agreement over a seeded instance grid.

    Each instance draws a mesh (both basic units and the diagonal appear
    across the grid), random inputs/targets for the quadratic loss
    ||M x - t||^2, and compares: fused vs tape phase gradients and input
    cotangents; both paths vs central finite differences; plus pointwise
    probes (modReLU, dense, power->softmax) against finite differences.
    """
    fused_vs_tape = 0.0
    f_rel = f_abs = t_rel = t_abs = 0.0
    for inst in range(instances):
        rng = np.random.default_rng(np.random.SeedSequence([seed, inst]))
        unit = BasicUnit.PSDC if inst % 2 == 0 else BasicUnit.DCPS
        mesh = build_mesh(
            n, fine_layers, basic_unit=unit, with_diag=inst % 4 >= 2,
            init="uniform", seed=int(rng.integers(1 << 31)),
        )
        x = rng.standard_normal((n, batch)) + 1j * rng.standard_normal((n, batch))
        target = rng.standard_normal((n, batch)) + 1j * rng.standard_normal((n, batch))

        acts = forward_sweep(mesh, x)
        g_out = acts[-1] - target
        g_in_f, grads_f = fused_backward_sweep(mesh, acts, g_out)
        y_t, g_in_t, grads_t = tape_forward_backward(mesh, x, g_out)
        fused_vs_tape = max(
            fused_vs_tape,
            _rel_diff(grads_f.flat(), grads_t.flat()),
            _rel_diff(g_in_f.ravel().view(float), g_in_t.ravel().view(float)),
            _rel_diff(acts[-1].ravel().view(float), y_t.ravel().view(float)),
        )
        fd = finite_difference_gradient(
            lambda m: _quadratic_loss(m, x, target), mesh, step=fd_step
        )
        r, a = _split_agreement(grads_f.flat(), fd.flat())
        f_rel, f_abs = max(f_rel, r), max(f_abs, a)
        r, a = _split_agreement(grads_t.flat(), fd.flat())
        t_rel, t_abs = max(t_rel, r), max(t_abs, a)

    pw_rel, pw_abs = _pointwise_probes(seed, fd_step)
    return GradcheckReport(
        fused_vs_tape=fused_vs_tape,
        fused_vs_fd_rel=f_rel,
        fused_vs_fd_abs=f_abs,
        tape_vs_fd_rel=t_rel,
        tape_vs_fd_abs=t_abs,
        pointwise_rel=pw_rel,
        pointwise_abs=pw_abs,
        instances=instances,
    )


def _fd_real(f, x: np.ndarray, step: float) -> np.ndarray:
    """Central differences of scalar f over a real array (may be a view)."""
    g = np.zeros(x.shape)
    for idx in np.ndindex(*x.shape):
        orig = x[idx]
        x[idx] = orig + step
        lp = f()
        x[idx] = orig - step
        lm = f()
        x[idx] = orig
        g[idx] = (lp - lm) / (2 * step)
    return g


def _fd_complex(f, z: np.ndarray, step: float) -> np.ndarray:
    """dL/dz* via central differences: (dL/dRe + i dL/dIm)/2."""
    # the strided views write through to z, so f() sees each perturbation
    re = _fd_real(f, z.view(np.float64)[..., 0::2], step)
    im = _fd_real(f, z.view(np.float64)[..., 1::2], step)
    return (re + 1j * im) / 2.0


def _pointwise_probes(seed: int, fd_step: float) -> tuple[float, float]:
    """modReLU, dense, and power->softmax gradients vs finite differences.

    Returns (max relative error, max absolute error on near-zero oracle
    entries) across all three probes.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 999]))
    worst_rel = worst_abs = 0.0

    def fold(r, a):
        nonlocal worst_rel, worst_abs
        worst_rel = max(worst_rel, r)
        worst_abs = max(worst_abs, a)

    # modReLU: L = sum w |modrelu(y, b) - c|^2, gradients wrt y (Wirtinger) and b
    h, batch = 5, 3
    y = rng.standard_normal((h, batch)) + 1j * rng.standard_normal((h, batch))
    b = rng.uniform(-1.2, 0.3, h)  # mix of active and clipped units
    c = rng.standard_normal((h, batch)) + 1j * rng.standard_normal((h, batch))
    w = rng.uniform(0.5, 2.0, (h, batch))

    def mod_loss():
        d = modrelu(y, b) - c
        return float(np.sum(w * (d.real**2 + d.imag**2)))

    g_out = w * (modrelu(y, b) - c)
    g_y, g_b = modrelu_backward(y, b, g_out)
    fold(*_split_agreement(
        np.concatenate([g_y.ravel().view(float), g_b]),
        np.concatenate([_fd_complex(mod_loss, y, fd_step).ravel().view(float),
                        _fd_real(mod_loss, b, fd_step)]),
        floor=1e-7,
    ))

    # dense: L = sum |W x - c|^2
    o, hh = 4, 3
    wmat = rng.standard_normal((o, hh)) + 1j * rng.standard_normal((o, hh))
    x = rng.standard_normal((hh, batch)) + 1j * rng.standard_normal((hh, batch))
    cd = rng.standard_normal((o, batch)) + 1j * rng.standard_normal((o, batch))

    def dense_loss():
        d = wmat @ x - cd
        return float(np.sum(d.real**2 + d.imag**2))

    gy = wmat @ x - cd
    gx, gw = dense_complex_backward(wmat, x, gy)
    fold(*_split_agreement(
        gx.ravel().view(float), _fd_complex(dense_loss, x, fd_step).ravel().view(float),
        floor=1e-7,
    ))
    fold(*_split_agreement(
        gw.ravel().view(float), _fd_complex(dense_loss, wmat, fd_step).ravel().view(float),
        floor=1e-7,
    ))

    # power + softmax cross-entropy: dL/dz* = g_p z with g_p = (softmax - onehot)/B
    oo = 6
    z = rng.standard_normal((oo, batch)) + 1j * rng.standard_normal((oo, batch))
    labels = rng.integers(0, oo, batch)

    def ce_loss():
        loss, _, _ = softmax_cross_entropy(power_forward(z), labels)
        return loss

    _, g_logits, _ = softmax_cross_entropy(power_forward(z), labels)
    g_z = power_backward(z, g_logits)
    fold(*_split_agreement(
        g_z.ravel().view(float), _fd_complex(ce_loss, z, fd_step).ravel().view(float),
        floor=1e-7,
    ))
    return worst_rel, worst_abs
