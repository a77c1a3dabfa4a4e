"""Independent oracles for the theory behind noisy-meta reweighting.

Everything here is checked against *exact expectations* computed by
enumerating corrupted labels with their probabilities, never by trusting
the training-path code:

* Under uniform label noise at rate eta, the expected meta-gradient on
  corrupted labels equals (1 - eta) times the clean meta-gradient exactly
  when the meta loss is symmetric (MAE).  Cross-entropy breaks this.
* Under flip noise with a fixed per-class target map the equality fails,
  but averaging the expectation over every admissible target map restores
  proportionality to the clean gradient.
* The variance of corrupted meta minibatch gradients is bounded by the
  clean minibatch variance plus 2*eta*rho^2/m, with rho a bound on
  per-sample gradient norms.
* The closed-form weighting-parameter gradient in ``bilevel`` matches
  central finite differences of the composed objective (meta loss after
  one virtual step), checked away from rectifier kinks.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .bilevel import Batch, BilevelState, theta_gradient, virtual_step
from .losses import LossKind
from .nets import ClassifierNet, WeightNet
from .noise import NoiseKind, NoiseSpec, build_transition, corrupt
from .numkit import Rng
from .data import LabeledDataset

DEFAULT_VERIFY_SEED = 20240117
FD_STEP = 1e-6
KINK_MARGIN = 10 * FD_STEP


# -- exact expectations ------------------------------------------------------


def per_label_gradients(classifier: ClassifierNet, params: np.ndarray,
                        features: np.ndarray, kind: LossKind) -> np.ndarray:
    """Gradients for every (sample, label) pair at ``params``: (n, K, P)."""
    saved = classifier.get_flat()
    n = features.shape[0]
    k = classifier.num_classes
    try:
        classifier.set_flat(params)
        out = np.empty((n, k, classifier.num_params))
        for c in range(k):
            _, grads = classifier.losses_and_grads_batch(
                features, np.full(n, c, dtype=np.int64), kind)
            out[:, c, :] = grads
    finally:
        classifier.set_flat(saved)
    return out


def clean_mean_gradient(classifier: ClassifierNet, params: np.ndarray,
                        features: np.ndarray, labels: np.ndarray,
                        kind: LossKind) -> np.ndarray:
    saved = classifier.get_flat()
    try:
        classifier.set_flat(params)
        _, grads = classifier.losses_and_grads_batch(features, labels, kind)
    finally:
        classifier.set_flat(saved)
    return grads.mean(axis=0)


def expected_uniform_gradient(classifier: ClassifierNet, params: np.ndarray,
                              features: np.ndarray, clean_labels: np.ndarray,
                              eta: float, kind: LossKind) -> np.ndarray:
    """Exact expected mean gradient under uniform noise: no sampling.

    Per sample, the observed label keeps the clean value with probability
    (1 - eta) plus an eta/K share for every class, so the expectation is
    (1 - eta) * grad(clean) + (eta/K) * sum over all labels.
    """
    if not 0.0 <= eta < 1.0:
        raise ValueError(f"noise rate must lie in [0, 1), got {eta}")
    g_all = per_label_gradients(classifier, params, features, kind)
    labels = np.asarray(clean_labels, dtype=np.int64)
    g_clean = g_all[np.arange(labels.size), labels].mean(axis=0)
    g_sum = g_all.sum(axis=1).mean(axis=0)
    return (1.0 - eta) * g_clean + (eta / classifier.num_classes) * g_sum


def expected_flip_gradient(classifier: ClassifierNet, params: np.ndarray,
                           features: np.ndarray, clean_labels: np.ndarray,
                           eta: float, targets: np.ndarray,
                           kind: LossKind) -> np.ndarray:
    """Exact expected mean gradient under flip noise with a fixed target map."""
    targets = np.asarray(targets, dtype=np.int64)
    if np.any(targets == np.arange(targets.size)):
        raise ValueError("flip target map must move every class")
    labels = np.asarray(clean_labels, dtype=np.int64)
    g_clean = clean_mean_gradient(classifier, params, features, labels, kind)
    g_flip = clean_mean_gradient(classifier, params, features, targets[labels], kind)
    return (1.0 - eta) * g_clean + eta * g_flip


def all_flip_maps(num_classes: int):
    """Every target map sending each class to some other class: (K-1)^K maps."""
    choices = [[c for c in range(num_classes) if c != y] for y in range(num_classes)]
    for combo in itertools.product(*choices):
        yield np.array(combo, dtype=np.int64)


@dataclass
class EquivalenceReport:
    residual_norm: float       # || E[noisy grad] - (1-eta) * clean grad ||
    clean_norm: float
    relative_residual: float
    kind: LossKind
    eta: float
    num_classes: int


def equivalence_report(classifier: ClassifierNet, params: np.ndarray,
                       features: np.ndarray, clean_labels: np.ndarray,
                       eta: float, kind: LossKind) -> EquivalenceReport:
    labels = np.asarray(clean_labels, dtype=np.int64)
    clean = clean_mean_gradient(classifier, params, features, labels, kind)
    expected = expected_uniform_gradient(classifier, params, features, labels, eta, kind)
    residual = float(np.linalg.norm(expected - (1.0 - eta) * clean))
    clean_norm = float(np.linalg.norm(clean))
    return EquivalenceReport(residual, clean_norm, residual / max(clean_norm, 1e-12),
                             kind, eta, classifier.num_classes)


def proportionality_residual(g: np.ndarray, reference: np.ndarray) -> float:
    """Relative distance of g from the line spanned by the reference."""
    denom = float(np.dot(reference, reference))
    if denom <= 0.0:
        raise ValueError("reference gradient is zero; proportionality undefined")
    scale = float(np.dot(g, reference)) / denom
    return float(np.linalg.norm(g - scale * reference) / np.sqrt(denom))


# -- variance bound ----------------------------------------------------------


@dataclass
class VarianceCheckReport:
    empirical_variance: float  # corrupted minibatch deviation from (1-eta)*mean
    bound: float               # sigma_sq + 2*eta*rho^2/m
    sigma_sq: float            # clean minibatch-gradient variance
    rho: float                 # max per-(sample, label) gradient norm
    m: int
    eta: float
    holds: bool


def _minibatch_mean_grads(g_rows: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Means of rows of g_rows grouped as (trials, m) index draws."""
    return g_rows[idx].mean(axis=1)


def variance_bound_check(classifier: ClassifierNet, params: np.ndarray,
                         pool: LabeledDataset, eta: float, m: int,
                         trials: int, rng: Rng, slack: float = 0.05,
                         kind: LossKind = LossKind.MAE) -> VarianceCheckReport:
    """Monte-Carlo check that corrupting meta minibatches inflates the
    gradient variance by at most 2*eta*rho^2/m.

    Only symmetric meta losses are admitted: the (1 - eta)-scaled mean the
    corrupted deviation is measured from *is* the expectation only then.
    """
    if kind is not LossKind.MAE:
        raise ValueError("variance bound is only claimed for the symmetric (MAE) loss")
    if trials < 1000:
        raise ValueError("need at least 1000 trials for a stable estimate")
    if m < 1 or not 0.0 <= eta < 1.0:
        raise ValueError("bad minibatch size or noise rate")

    k = classifier.num_classes
    g_all = per_label_gradients(classifier, params, pool.features, kind)
    g_clean = g_all[np.arange(len(pool)), pool.labels]
    mu = g_clean.mean(axis=0)
    rho = float(np.linalg.norm(g_all, axis=2).max())

    clean_idx = rng.randints(trials * m, len(pool)).reshape(trials, m)
    dev = _minibatch_mean_grads(g_clean, clean_idx) - mu
    sigma_sq = float((dev ** 2).sum(axis=1).mean())

    noisy_idx = rng.randints(trials * m, len(pool)).reshape(trials, m)
    flip_mask = rng.uniforms(trials * m).reshape(trials, m) < eta
    drawn = rng.randints(trials * m, k).reshape(trials, m)
    labels = np.where(flip_mask, drawn, pool.labels[noisy_idx])
    noisy_means = g_all[noisy_idx, labels].mean(axis=1)
    dev_noisy = noisy_means - (1.0 - eta) * mu
    empirical = float((dev_noisy ** 2).sum(axis=1).mean())

    bound = sigma_sq + 2.0 * eta * rho ** 2 / m
    return VarianceCheckReport(empirical, bound, sigma_sq, rho, m, eta,
                               empirical <= bound * (1.0 + slack))


# -- finite-difference oracle for the weighting-parameter gradient -----------


def finite_diff_theta_grad(classifier: ClassifierNet, weightnet: WeightNet,
                           train_batch: Batch, meta_batch: Batch,
                           alpha: float, kind: LossKind,
                           step: float = FD_STEP) -> np.ndarray:
    """Central differences of theta -> mean meta loss after the virtual step.

    The training-batch losses and per-sample gradients do not depend on
    the weighting parameters, so they are computed once; each coordinate
    evaluation only re-runs the weighting net and the meta forward pass.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    losses, grads = classifier.losses_and_grads_batch(
        train_batch.features, train_batch.labels, LossKind.CE)
    w0 = classifier.get_flat()
    theta0 = weightnet.get_flat()
    n = len(train_batch)

    def objective(theta: np.ndarray) -> float:
        weightnet.set_flat(theta)
        weights = weightnet.forward_batch(losses)
        classifier.set_flat(w0 - (alpha / n) * (weights @ grads))
        vals = classifier.losses_batch(meta_batch.features, meta_batch.labels, kind)
        return float(vals.mean())

    try:
        out = np.empty(theta0.size)
        for i in range(theta0.size):
            theta = theta0.copy()
            theta[i] = theta0[i] + step
            f_plus = objective(theta)
            theta[i] = theta0[i] - step
            f_minus = objective(theta)
            out[i] = (f_plus - f_minus) / (2.0 * step)
    finally:
        weightnet.set_flat(theta0)
        classifier.set_flat(w0)
    return out


def composed_meta_objective(state: BilevelState, train_batch: Batch,
                            meta_batch: Batch, alpha: float,
                            kind: LossKind) -> float:
    """Mean meta loss at the virtually updated classifier."""
    w_hat = virtual_step(state, train_batch, alpha)
    saved = state.classifier.get_flat()
    try:
        state.classifier.set_flat(w_hat)
        vals = state.classifier.losses_batch(
            meta_batch.features, meta_batch.labels, kind)
    finally:
        state.classifier.set_flat(saved)
    return float(vals.mean())


# -- random instance builders -------------------------------------------------


def random_classifier_instance(rng: Rng, num_classes: int, dim: int = 4,
                               hidden=(8,), batch: int = 6):
    """Small random net plus a feature/label batch at a random point."""
    classifier = ClassifierNet([dim, *hidden, num_classes], rng)
    features = rng.gaussians(batch * dim).reshape(batch, dim)
    labels = rng.randints(batch, num_classes)
    return classifier, features, labels


def random_hypergrad_instance(rng: Rng, dim: int = 3, num_classes: int = 3,
                              n_train: int = 4, n_meta: int = 4,
                              hidden=(5,), alpha: float = 0.1,
                              kind: LossKind = LossKind.MAE,
                              kink_margin: float = KINK_MARGIN):
    """Random tiny bilevel instance, resampled until the finite-difference
    oracle is trustworthy there.

    Rejected when any rectifier pre-activation (weighting net on the
    training losses, classifier at the virtual point on the meta batch)
    sits within ``kink_margin`` of zero, or when the analytic gradient is
    so small that relative comparison is meaningless.
    """
    while True:
        classifier = ClassifierNet([dim, *hidden, num_classes], rng)
        weightnet = WeightNet(rng)
        train_batch = Batch(rng.gaussians(n_train * dim).reshape(n_train, dim),
                            rng.randints(n_train, num_classes))
        meta_batch = Batch(rng.gaussians(n_meta * dim).reshape(n_meta, dim),
                           rng.randints(n_meta, num_classes))
        state = BilevelState.fresh(classifier, weightnet, alpha)

        losses = classifier.losses_batch(train_batch.features, train_batch.labels,
                                         LossKind.CE)
        wn_pre = weightnet.hidden_preactivations(losses)
        w_hat = virtual_step(state, train_batch, alpha)
        saved = classifier.get_flat()
        classifier.set_flat(w_hat)
        cl_pre = classifier.hidden_preactivations(meta_batch.features)
        classifier.set_flat(saved)

        margin = min(np.abs(wn_pre).min(initial=np.inf),
                     np.abs(cl_pre).min(initial=np.inf))
        analytic = theta_gradient(state, train_batch, meta_batch, alpha, kind)
        if margin > kink_margin and np.linalg.norm(analytic) >= 1e-6:
            return state, train_batch, meta_batch, analytic


# -- Monte-Carlo convergence of sampled noisy meta-gradients ------------------


def mc_convergence_slope(rng: Rng, eta: float = 0.4, num_classes: int = 5,
                         batch: int = 6,
                         trial_counts=(100, 400, 1600, 6400),
                         repeats: int = 40) -> float:
    """Log-log slope of |sampled mean - exact expectation| against the
    number of sampled corrupted minibatches (should be about -1/2)."""
    classifier, features, labels = random_classifier_instance(
        rng, num_classes, batch=batch)
    params = classifier.get_flat()
    g_all = per_label_gradients(classifier, params, features, LossKind.MAE)
    expected = expected_uniform_gradient(classifier, params, features, labels,
                                         eta, LossKind.MAE)
    log_errors = []
    for trials in trial_counts:
        errs = np.empty(repeats)
        for r in range(repeats):
            flip = rng.uniforms(trials * batch).reshape(trials, batch) < eta
            drawn = rng.randints(trials * batch, num_classes).reshape(trials, batch)
            obs = np.where(flip, drawn, labels[None, :])
            est = g_all[np.arange(batch)[None, :], obs].mean(axis=(0, 1))
            errs[r] = np.linalg.norm(est - expected)
        log_errors.append(np.mean(np.log10(errs)))
    slope, _ = np.polyfit(np.log10(np.asarray(trial_counts, dtype=float)),
                          np.array(log_errors), 1)
    return float(slope)


# -- property suite -----------------------------------------------------------


@dataclass
class PropertyResult:
    name: str
    passed: bool
    detail: str


def _prop_uniform_expectation(seed: int) -> list[PropertyResult]:
    rng = Rng(seed).spawn(101)
    rates = (0.2, 0.4, 0.6, 0.8)
    classes = (3, 5, 10)
    per_cell = 17  # 3 * 4 * 17 = 204 instances
    worst_mae = 0.0
    ce_hits = 0
    total = 0
    for k in classes:
        for eta in rates:
            for _ in range(per_cell):
                classifier, x, y = random_classifier_instance(rng, k)
                params = classifier.get_flat()
                rep = equivalence_report(classifier, params, x, y, eta, LossKind.MAE)
                worst_mae = max(worst_mae, rep.relative_residual)
                rep_ce = equivalence_report(classifier, params, x, y, eta, LossKind.CE)
                ce_hits += rep_ce.relative_residual > 1e-3
                total += 1
    return [
        PropertyResult(
            "uniform-mae-expectation",
            worst_mae <= 1e-10,
            f"max relative residual {worst_mae:.3e} over {total} instances (limit 1e-10)"),
        PropertyResult(
            "uniform-ce-control",
            ce_hits >= 0.9 * total,
            f"CE residual > 1e-3 on {ce_hits}/{total} instances (need >= 90%)"),
    ]


def _prop_symmetry(seed: int) -> list[PropertyResult]:
    from .losses import symmetry_sum

    rng = Rng(seed).spawn(102)
    worst = 0.0
    for k in (2, 3, 5, 10):
        for _ in range(1000):
            raw = -np.log(rng.uniforms(k))
            u = raw / raw.sum()
            worst = max(worst, abs(symmetry_sum(LossKind.MAE, u) - (2 * k - 2)))
    sums = []
    for _ in range(10):
        raw = -np.log(rng.uniforms(5))
        sums.append(symmetry_sum(LossKind.CE, raw / raw.sum()))
    spread = max(sums) - min(sums)
    return [
        PropertyResult("mae-symmetry-sum", worst <= 1e-12,
                       f"max |sum - (2K-2)| = {worst:.3e} (limit 1e-12)"),
        PropertyResult("ce-symmetry-varies", spread > 0.1,
                       f"CE symmetry-sum spread {spread:.3f} over 10 draws (need > 0.1)"),
    ]


def _prop_noise_model(seed: int) -> list[PropertyResult]:
    results = []
    t = build_transition(NoiseSpec(NoiseKind.UNIFORM, 0.4, 5, seed=1))
    ok = (np.allclose(np.diag(t.probs), 0.68, atol=1e-12)
          and np.allclose(t.probs[~np.eye(5, dtype=bool)], 0.08, atol=1e-12))
    tf = build_transition(NoiseSpec(NoiseKind.FLIP, 0.4, 5, seed=1))
    ok &= bool(np.allclose(np.diag(tf.probs), 0.6)
               and all(np.sum(np.abs(row - 0.4) < 1e-12) == 1 for row in tf.probs))
    t2 = build_transition(NoiseSpec(NoiseKind.FLIP2, 0.4, 5, seed=1))
    ok &= bool(np.allclose(np.diag(t2.probs), 0.6)
               and all(np.sum(np.abs(row - 0.2) < 1e-12) == 2 for row in t2.probs))
    t0 = build_transition(NoiseSpec(NoiseKind.UNIFORM, 0.0, 4, seed=1))
    ok &= bool(np.array_equal(t0.probs, np.eye(4)))
    results.append(PropertyResult(
        "noise-closed-forms", ok,
        "uniform 0.68/0.08, flip 0.6/0.4, flip2 0.6/0.2+0.2, identity at rate 0"))

    rng = Rng(seed).spawn(103)
    n = 100_000
    k = 5
    labels = np.arange(n, dtype=np.int64) % k
    ds = LabeledDataset(np.zeros((n, 1)), labels, k)
    worst_z = 0.0
    exact_ok = True
    for stream, spec in enumerate((NoiseSpec(NoiseKind.UNIFORM, 0.4, k, seed=7),
                                   NoiseSpec(NoiseKind.FLIP2, 0.4, k, seed=7))):
        tm = build_transition(spec)
        out = corrupt(ds, tm, rng.spawn(stream))
        for y in range(k):
            mask = labels == y
            n_y = int(mask.sum())
            freq = np.bincount(out.observed_labels[mask], minlength=k) / n_y
            for c in range(k):
                p = tm.probs[y, c]
                se = np.sqrt(p * (1 - p) / n_y)
                if se == 0.0:
                    exact_ok &= freq[c] == p
                else:
                    worst_z = max(worst_z, abs(freq[c] - p) / se)
    results.append(PropertyResult(
        "noise-corruption-frequencies", exact_ok and worst_z <= 3.0,
        f"max |freq - p| = {worst_z:.2f} standard errors at n=100000 (limit 3)"))
    return results


def _prop_flip(seed: int) -> list[PropertyResult]:
    rng = Rng(seed).spawn(104)
    k = 3
    witness = 0.0
    found = False
    for _ in range(10):
        classifier, x, y = random_classifier_instance(rng, k)
        params = classifier.get_flat()
        targets = (np.arange(k) + 1 + rng.randint(k - 1)) % k
        clean = clean_mean_gradient(classifier, params, x, y, LossKind.MAE)
        g = expected_flip_gradient(classifier, params, x, y, 0.4, targets, LossKind.MAE)
        witness = max(witness, proportionality_residual(g, clean))
        if witness > 1e-3:
            found = True
            break
    classifier, x, y = random_classifier_instance(rng, k)
    params = classifier.get_flat()
    clean = clean_mean_gradient(classifier, params, x, y, LossKind.MAE)
    maps = list(all_flip_maps(k))
    avg = np.mean([expected_flip_gradient(classifier, params, x, y, 0.4, t, LossKind.MAE)
                   for t in maps], axis=0)
    resid = proportionality_residual(avg, clean)
    return [
        PropertyResult("flip-fixed-map-not-proportional", found,
                       f"witness residual {witness:.3e} (need > 1e-3 within 10 instances)"),
        PropertyResult("flip-enumerated-maps-proportional", resid <= 1e-10,
                       f"residual {resid:.3e} averaging all {len(maps)} maps (limit 1e-10)"),
    ]


def _prop_hypergradient(seed: int) -> list[PropertyResult]:
    rng = Rng(seed).spawn(105)
    worst = 0.0
    for i in range(20):
        kind = LossKind.MAE if i % 2 == 0 else LossKind.CE
        state, tb, mb, analytic = random_hypergrad_instance(rng, kind=kind)
        fd = finite_diff_theta_grad(state.classifier, state.weightnet, tb, mb,
                                    0.1, kind)
        rel = np.linalg.norm(analytic - fd) / max(np.linalg.norm(analytic), 1e-12)
        worst = max(worst, rel)
    descent_ok = True
    detail_drop = np.inf
    for i in range(5):
        kind = LossKind.MAE if i % 2 == 0 else LossKind.CE
        state, tb, mb, analytic = random_hypergrad_instance(rng, kind=kind)
        before = composed_meta_objective(state, tb, mb, 0.1, kind)
        theta = state.weightnet.get_flat()
        state.weightnet.set_flat(theta - 1e-6 * analytic)
        after = composed_meta_objective(state, tb, mb, 0.1, kind)
        state.weightnet.set_flat(theta)
        descent_ok &= after <= before + 1e-12 * max(1.0, abs(before))
        detail_drop = min(detail_drop, before - after)
    return [
        PropertyResult("hypergradient-finite-difference", worst <= 1e-4,
                       f"max relative error {worst:.3e} over 20 instances (limit 1e-4)"),
        PropertyResult("hypergradient-descent-step", bool(descent_ok),
                       f"objective drop >= {detail_drop:.3e} after a 1e-6 step"),
    ]


def _prop_variance_bound(seed: int) -> list[PropertyResult]:
    rng = Rng(seed).spawn(106)
    holds = 0
    configs = 100
    for _ in range(configs):
        k = 5
        classifier, x, y = random_classifier_instance(rng, k, dim=4, hidden=(8,),
                                                      batch=40)
        pool = LabeledDataset(x, y, k)
        rep = variance_bound_check(classifier, classifier.get_flat(), pool,
                                   eta=0.4, m=20, trials=1200, rng=rng)
        holds += rep.holds
    return [PropertyResult(
        "variance-bound", holds >= 95,
        f"bound held in {holds}/{configs} random configurations (need >= 95)")]


def _prop_mc_rate(seed: int) -> list[PropertyResult]:
    slope = mc_convergence_slope(Rng(seed).spawn(107))
    return [PropertyResult(
        "mc-convergence-rate", -0.65 <= slope <= -0.35,
        f"log-log error slope {slope:.3f} (expect -0.5 +- 0.15)")]


def run_all(seed: int = DEFAULT_VERIFY_SEED) -> list[PropertyResult]:
    """Every verification property at fixed internal seeds."""
    results: list[PropertyResult] = []
    results += _prop_symmetry(seed)
    results += _prop_uniform_expectation(seed)
    results += _prop_flip(seed)
    results += _prop_noise_model(seed)
    results += _prop_hypergradient(seed)
    results += _prop_variance_bound(seed)
    results += _prop_mc_rate(seed)
    return results
