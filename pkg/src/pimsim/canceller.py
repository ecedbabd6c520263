"""Channel-coefficients PIM cancellation.

Per hypothesized source, one complex inner weight per (TX chain, carrier)
combines the upsampled component-carrier references into estimated forward
excitations; a generalized-memory-polynomial basis-function bank on those
combined signals spans the products landing at 2fL - fH; outer complex
coefficients on the columns are fit by (ridge) least squares; the inner
weights adapt by stochastic gradient descent on block residual power, with
an LS refresh of the outer coefficients after every epoch.  Each RX chain is
cancelled independently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .waveform import BasebandSignal, CarrierPlan, extract_band, rng_for

LF, HF = 0, 1


class CancellerDivergence(RuntimeError):
    def __init__(self, message, log):
        super().__init__(message)
        self.log = log


@dataclass(frozen=True)
class CcReferences:
    """Per-chain LF/HF component-carrier references, time-aligned with RX."""

    refs: np.ndarray            # (n_chains, 2, n_samples) complex
    sample_rate: float

    def __post_init__(self):
        r = np.asarray(self.refs, dtype=complex)
        if r.ndim != 3 or r.shape[1] != 2:
            raise ValueError("refs must have shape (n_chains, 2, n_samples)")
        object.__setattr__(self, "refs", r)

    @property
    def n_chains(self) -> int:
        return self.refs.shape[0]

    @property
    def n_samples(self) -> int:
        return self.refs.shape[2]


def build_cc_references(tx_chains, plan: CarrierPlan) -> CcReferences:
    """Extract each chain's LF and HF carriers at the canceller rate.

    The extraction filter is the zero-phase FFT brick wall, so the
    references keep exact time alignment with the RX capture; the physical
    propagation delay stays inside the unknown channel, where the memory
    taps of the compensation model absorb it.
    """
    if plan.n_cc != 2:
        raise ValueError("the canceller expects exactly two component carriers (LF, HF)")
    rate = tx_chains[0].sample_rate
    n = len(tx_chains[0])
    out = np.empty((len(tx_chains), 2, n), dtype=complex)
    for i, sig in enumerate(tx_chains):
        if sig.sample_rate != rate or len(sig) != n:
            raise ValueError("TX chains must share one rate and one length")
        for c in (LF, HF):
            out[i, c] = extract_band(sig, plan.cc_offsets[c], plan.cc_bandwidths[c],
                                     rate).samples
    return CcReferences(out, rate)


@dataclass(frozen=True)
class CancellerConfig:
    """Compensation-model structure and optimizer settings.

    `bf_bandwidth` band-limits every basis-function column with the same
    ideal brick wall the RX duplexer applies; without it the raw products
    carry spectral-regrowth energy outside the captured RX band that no
    coefficient choice can remove from the residual.
    """

    p_orders: tuple = (3, 5)
    m_taps: tuple = (-2, -1, 0, 1, 2)
    k_taps: tuple = (-1, 0, 1)
    n_sources: int = 1
    sgd_step: float = 5e-2
    sgd_block: int = 2048
    epochs: int = 120
    step_decay: float = 0.5
    plateau_db: float = 0.05
    decay_patience: int = 6
    max_decays: int = 8
    ridge_rel: float = 1e-6
    ls_subset: int = 32768
    init: str = "random"
    divergence_db: float = 10.0
    bf_bandwidth: float | None = None

    def __post_init__(self):
        for p in self.p_orders:
            if p not in (3, 5):
                raise ValueError("compensation orders are limited to {3, 5}")
        if self.n_sources < 1:
            raise ValueError("need at least one hypothesized source")
        if self.sgd_block <= 4 * self.max_delay + 8:
            raise ValueError("block length must exceed the memory span")
        if self.init not in ("random",):
            raise ValueError(f"unknown init scheme {self.init!r}")

    @property
    def max_delay(self) -> int:
        span = [abs(m) for m in self.m_taps]
        span += [abs(m + k) for m in self.m_taps for k in self.k_taps]
        return max(span)


def _band_mask(n: int, fs: float, bw: float) -> np.ndarray:
    return np.abs(np.fft.fftfreq(n, d=1.0 / fs)) <= 0.5 * bw


def bandlimit(x: np.ndarray, fs: float, bw: float | None) -> np.ndarray:
    """Zero-phase ideal band limit over the given window (per-column for 2-D)."""
    if bw is None:
        return x
    mask = _band_mask(x.shape[0] if x.ndim == 2 else x.size, fs, bw)
    spec = np.fft.fft(x, axis=0)
    spec[~mask] = 0.0
    return np.fft.ifft(spec, axis=0)


@dataclass(frozen=True)
class BfTerm:
    """One basis-function column: a product of delayed (possibly conjugated)
    combined-carrier factors, all landing at 2fL - fH."""

    p: int
    m: int
    k: int
    envelope: str                  # "" for p=3, "L" or "H" for p=5
    factors: tuple                 # ((carrier, delay, conjugate), ...)

    @property
    def conj_counts(self) -> tuple:
        n_plain = sum(not f[2] for f in self.factors)
        n_conj = sum(bool(f[2]) for f in self.factors)
        return n_plain, n_conj


def term_catalogue(cfg: CancellerConfig) -> tuple:
    """All columns for one source, ordered (p, m, k, envelope variant).

    p=3, (m, k):  vL(t-m) * vL(t-m-k) * conj(vH(t-m-k))
    p=5 adds the same kernel times |vL(t-m-k)|^2 or |vH(t-m-k)|^2.
    """
    terms = []
    for p in sorted(cfg.p_orders):
        for m in cfg.m_taps:
            for k in cfg.k_taps:
                base = ((LF, m, False), (LF, m + k, False), (HF, m + k, True))
                if p == 3:
                    terms.append(BfTerm(3, m, k, "", base))
                else:
                    for env, carrier in (("L", LF), ("H", HF)):
                        extra = ((carrier, m + k, False), (carrier, m + k, True))
                        terms.append(BfTerm(5, m, k, env, base + extra))
    if not terms:
        raise ValueError("empty compensation term set")
    return tuple(terms)


def _padded_slice(x: np.ndarray, a: int, b: int) -> np.ndarray:
    """x[a:b] with zeros where the indices leave the array."""
    n = x.shape[-1]
    if 0 <= a and b <= n:
        return x[..., a:b]
    out = np.zeros(x.shape[:-1] + (b - a,), dtype=x.dtype)
    lo, hi = max(a, 0), min(b, n)
    if lo < hi:
        out[..., lo - a:hi - a] = x[..., lo:hi]
    return out


def combine(w: np.ndarray, refs: CcReferences, s: int) -> np.ndarray:
    """Weighted chain combination for source s: v[c] = sum_n w[s,n,c]*x[n,c]."""
    return np.einsum("nc,nct->ct", w[s], refs.refs)


def _combine_window(w_s: np.ndarray, refs: np.ndarray, a: int, b: int) -> np.ndarray:
    """combine() on the global window [a, b), zero-padded outside the stream."""
    return np.einsum("nc,nct->ct", w_s, _padded_slice(refs, a, b))


def _columns(vext: np.ndarray, margin: int, length: int, terms) -> np.ndarray:
    """BF columns (length x n_terms) from a margin-extended combined window."""
    phi = np.empty((length, len(terms)), dtype=complex)
    for j, term in enumerate(terms):
        col = None
        for (c, tau, conj) in term.factors:
            fac = vext[c, margin - tau: margin - tau + length]
            if conj:
                fac = np.conj(fac)
            col = fac.copy() if col is None else col * fac
        phi[:, j] = col
    return phi


def build_bf_matrix(v_l: np.ndarray, v_h: np.ndarray, cfg: CancellerConfig,
                    sample_rate: float | None = None) -> np.ndarray:
    """Single-source BF matrix from the combined LF/HF carriers.

    Rows are time samples, columns the catalogue order of term_catalogue();
    edges use zero history.  With cfg.bf_bandwidth set, every column is
    band-limited over the provided window (sample_rate then required).
    """
    v = np.vstack([np.asarray(v_l, dtype=complex), np.asarray(v_h, dtype=complex)])
    terms = term_catalogue(cfg)
    margin = cfg.max_delay
    n = v.shape[1]
    if n <= 2 * margin:
        raise ValueError("signal shorter than the memory span")
    vext = _padded_slice(v, -margin, n + margin)
    phi = _columns(vext, margin, n, terms)
    if cfg.bf_bandwidth is not None:
        if sample_rate is None:
            raise ValueError("sample_rate required when bf_bandwidth is set")
        phi = bandlimit(phi, sample_rate, cfg.bf_bandwidth)
    return phi


def _multi_source_columns(w, refs, terms, margin, a, b) -> np.ndarray:
    """Concatenated per-source BF columns on the global window [a, b)."""
    blocks = []
    for s in range(w.shape[0]):
        vext = _combine_window(w[s], refs, a - margin, b + margin)
        blocks.append(_columns(vext, margin, b - a, terms))
    return np.hstack(blocks) if len(blocks) > 1 else blocks[0]


def ls_fit(bf: np.ndarray, rx: np.ndarray, ridge: float = 0.0):
    """argmin ||rx - bf g||^2 + ridge ||g||^2; returns (g, residual)."""
    bf = np.asarray(bf)
    rx = np.asarray(rx).reshape(-1)
    if bf.shape[0] < bf.shape[1]:
        raise ValueError("need at least as many rows as columns")
    if ridge == 0.0:
        g, _, rank, _ = np.linalg.lstsq(bf, rx, rcond=None)
        if rank < bf.shape[1]:
            raise np.linalg.LinAlgError(
                f"rank-deficient basis matrix (rank {rank} < {bf.shape[1]}) with ridge 0"
            )
    else:
        gram = bf.conj().T @ bf
        gram[np.diag_indices_from(gram)] += ridge
        g = np.linalg.solve(gram, bf.conj().T @ rx)
    return g, rx - bf @ g


def block_loss_and_gradient(w, g, refs: CcReferences, rx: np.ndarray,
                            lo: int, hi: int, cfg: CancellerConfig):
    """Mean residual power over [lo, hi) and its gradient in the inner weights.

    The returned gradient packs d(loss)/d(Re w) + j d(loss)/d(Im w)
    (the Wirtinger conjugate gradient times two); the outer coefficients g
    are held fixed.  With bf_bandwidth set, the model output is band-limited
    over the block window; the band limit is Hermitian and idempotent, so it
    moves onto the residual in the gradient contractions.
    """
    terms = term_catalogue(cfg)
    margin = cfg.max_delay
    n_src, n_chains, _ = w.shape
    length = hi - lo
    x = refs.refs

    y = np.zeros(length, dtype=complex)
    pi_cache = []                  # per source: list over terms of per-factor partials
    for s in range(n_src):
        vext = _combine_window(w[s], x, lo - margin, hi + margin)
        per_term = []
        for j, term in enumerate(terms):
            facs = []
            for (c, tau, conj) in term.factors:
                f = vext[c, margin - tau: margin - tau + length]
                facs.append(np.conj(f) if conj else f)
            q = len(facs)
            prefix = [None] * q
            suffix = [None] * q
            run = np.ones(length, dtype=complex)
            for i in range(q):
                prefix[i] = run
                run = run * facs[i]
            col = run
            run = np.ones(length, dtype=complex)
            for i in range(q - 1, -1, -1):
                suffix[i] = run
                run = run * facs[i]
            g_j = g[s * len(terms) + j]
            y += g_j * col
            per_term.append((term, g_j, prefix, suffix))
        pi_cache.append(per_term)

    e = rx[lo:hi] - bandlimit(y, refs.sample_rate, cfg.bf_bandwidth)
    loss = float(np.mean(np.abs(e) ** 2))
    e_f = bandlimit(e, refs.sample_rate, cfg.bf_bandwidth)
    e_conj = np.conj(e_f)
    grad = np.zeros_like(w)
    for s in range(n_src):
        acc: dict = {}
        for term, g_j, prefix, suffix in pi_cache[s]:
            for i, (c, tau, conj) in enumerate(term.factors):
                key = (c, tau, bool(conj))
                part = g_j * (prefix[i] * suffix[i])
                if key in acc:
                    acc[key] += part
                else:
                    acc[key] = part
        for (c, tau, conj), sens in acc.items():
            z = e_conj * sens if conj else e_f * np.conj(sens)
            xs = _padded_slice(x[:, c, :], lo - tau, hi - tau)
            grad[s, :, c] -= (2.0 / length) * (np.conj(xs) @ z)
    return loss, grad


def sgd_update(w, g, refs: CcReferences, rx: np.ndarray, lo: int, hi: int,
               cfg: CancellerConfig, step: float):
    """One SGD step on the inner weights over the block [lo, hi)."""
    loss, grad = block_loss_and_gradient(w, g, refs, rx, lo, hi, cfg)
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite SGD gradient; inner weights diverged")
    return w - step * grad, loss


@dataclass
class ConvergenceLog:
    """Per-epoch residual (dB over the noise floor) and coefficient norm."""

    iterations: list = field(default_factory=list)
    residual_db_over_nf: list = field(default_factory=list)
    coeff_norm: list = field(default_factory=list)

    def append(self, it: int, res_db: float, norm: float):
        self.iterations.append(it)
        self.residual_db_over_nf.append(res_db)
        self.coeff_norm.append(norm)


@dataclass
class ChainResult:
    chain: int
    w: np.ndarray
    g: np.ndarray
    residual: np.ndarray
    log: ConvergenceLog
    before_db_over_nf: float
    after_db_over_nf: float
    suppression_db: float


@dataclass
class CancelResult:
    chains: list
    noise_power: float

    @property
    def mean_suppression_db(self) -> float:
        return float(np.mean([c.suppression_db for c in self.chains]))

    @property
    def residuals(self) -> list:
        return [c.residual for c in self.chains]


def _ls_refresh(w, refs, rx, terms, margin, cfg, windows):
    """Normal-equation refresh of g over the given sample windows.

    Returns (g, residual_power) with the residual power evaluated exactly
    from the normal-equation byproducts.  With a band limit configured, the
    Gram and cross terms are accumulated from the masked column spectra
    (Parseval), which is the exact inner product of the filtered columns.
    """
    n_terms = len(terms) * w.shape[0]
    gram = np.zeros((n_terms, n_terms), dtype=complex)
    cross = np.zeros(n_terms, dtype=complex)
    rx_pow = 0.0
    n_tot = 0
    for (a, b) in windows:
        if cfg.bf_bandwidth is None:
            for ca in range(a, b, 16384):
                cb = min(ca + 16384, b)
                phi = _multi_source_columns(w, refs.refs, terms, margin, ca, cb)
                seg = rx[ca:cb]
                gram += phi.conj().T @ phi
                cross += phi.conj().T @ seg
                rx_pow += float(np.sum(np.abs(seg) ** 2))
                n_tot += cb - ca
        else:
            n = b - a
            phi = _multi_source_columns(w, refs.refs, terms, margin, a, b)
            spec = np.fft.fft(phi, axis=0)
            del phi
            spec[~_band_mask(n, refs.sample_rate, cfg.bf_bandwidth)] = 0.0
            seg_spec = np.fft.fft(rx[a:b])
            gram += spec.conj().T @ spec / n
            cross += spec.conj().T @ seg_spec / n
            rx_pow += float(np.sum(np.abs(rx[a:b]) ** 2))
            n_tot += n
    ridge = cfg.ridge_rel * np.trace(gram).real / n_terms
    reg = gram.copy()
    reg[np.diag_indices_from(reg)] += ridge
    g = np.linalg.solve(reg, cross)
    res = rx_pow - 2.0 * float(np.real(np.vdot(g, cross))) + float(np.real(g.conj() @ gram @ g))
    return g, max(res, 0.0) / n_tot


def _residual_signal(w, g, refs, rx, terms, margin, a, b, cfg) -> np.ndarray:
    """rx - (band-limited) model output over the global window [a, b)."""
    if cfg.bf_bandwidth is None:
        out = np.empty(b - a, dtype=complex)
        for ca in range(a, b, 16384):
            cb = min(ca + 16384, b)
            phi = _multi_source_columns(w, refs.refs, terms, margin, ca, cb)
            out[ca - a:cb - a] = rx[ca:cb] - phi @ g
        return out
    phi = _multi_source_columns(w, refs.refs, terms, margin, a, b)
    y = bandlimit(phi @ g, refs.sample_rate, cfg.bf_bandwidth)
    return rx[a:b] - y


def cancel_chain(rx: np.ndarray, refs: CcReferences, cfg: CancellerConfig,
                 noise_power: float, train_len: int, test_len: int,
                 seed: int, chain: int) -> ChainResult:
    """Full train/freeze/test loop for one RX chain."""
    terms = term_catalogue(cfg)
    margin = cfg.max_delay
    if train_len + test_len > rx.size:
        raise ValueError("rx capture shorter than train+test")
    if train_len < cfg.sgd_block:
        raise ValueError("training window shorter than one SGD block")

    # internal conditioning: unit-power RX makes step sizes scenario-free
    rx_scale = float(np.sqrt(np.mean(np.abs(rx[:train_len]) ** 2)))
    y = rx / rx_scale

    rng = rng_for(seed, 4, chain)
    w = (rng.standard_normal((cfg.n_sources, refs.n_chains, 2))
         + 1j * rng.standard_normal((cfg.n_sources, refs.n_chains, 2)))
    w *= np.sqrt(1.0 / (2.0 * refs.n_chains))

    n_blocks = train_len // cfg.sgd_block
    subset = min(cfg.ls_subset, train_len)
    n_offsets = max(train_len // subset, 1)

    def refresh(epoch, full=False):
        if full or subset == train_len:
            windows = [(0, train_len)]
        else:
            off = (epoch % n_offsets) * subset
            windows = [(off, off + subset)]
        return _ls_refresh(w, refs, y, terms, margin, cfg, windows)

    g, res_pow = refresh(0, full=False)
    log = ConvergenceLog()

    def res_db(p):
        return 10.0 * np.log10(max(p, 1e-300) * rx_scale ** 2 / noise_power)

    def coeff_norm(g_now):
        return float(np.sqrt(np.sum(np.abs(w) ** 2) + np.sum(np.abs(g_now) ** 2)))

    log.append(0, res_db(res_pow), coeff_norm(g))

    # step decays only after a sustained stall; the landscape has a genuine
    # plateau right after random init that an eager decay would freeze into
    step = cfg.sgd_step
    best_db = log.residual_db_over_nf[-1]
    stall = 0
    decays = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng_for(seed, 5, chain, epoch).permutation(n_blocks)
        for b_idx in order:
            lo = int(b_idx) * cfg.sgd_block
            w, _ = sgd_update(w, g, refs, y, lo, lo + cfg.sgd_block, cfg, step)
        g, res_pow = refresh(epoch)
        curr_db = res_db(res_pow)
        log.append(epoch, curr_db, coeff_norm(g))
        if curr_db > best_db + cfg.divergence_db:
            raise CancellerDivergence(
                f"chain {chain}: training residual grew {curr_db - best_db:.1f} dB past its best",
                log,
            )
        if best_db - curr_db < cfg.plateau_db:
            stall += 1
        else:
            stall = 0
        best_db = min(best_db, curr_db)
        if stall >= cfg.decay_patience:
            step *= cfg.step_decay
            decays += 1
            stall = 0
            if decays > cfg.max_decays:
                break

    g, _ = refresh(0, full=True)

    res_test = _residual_signal(w, g, refs, y, terms, margin,
                                train_len, train_len + test_len, cfg) * rx_scale
    before = float(np.mean(np.abs(rx[train_len:train_len + test_len]) ** 2))
    after = float(np.mean(np.abs(res_test) ** 2))
    return ChainResult(
        chain=chain,
        w=w,
        g=g * rx_scale,
        residual=res_test,
        log=log,
        before_db_over_nf=10 * np.log10(before / noise_power),
        after_db_over_nf=10 * np.log10(after / noise_power),
        suppression_db=10 * np.log10(before / after),
    )


def cancel_with_references(rx_chains, refs: CcReferences, cfg: CancellerConfig,
                           noise_power: float, train_len: int, test_len: int,
                           seed: int, n_workers: int = 1) -> CancelResult:
    """Run independent per-chain cancellers; deterministic for any worker count."""
    jobs = [(np.asarray(rx.samples if isinstance(rx, BasebandSignal) else rx), r)
            for r, rx in enumerate(rx_chains)]
    if n_workers > 1 and len(jobs) > 1:
        from joblib import Parallel, delayed
        chains = Parallel(n_jobs=n_workers)(
            delayed(cancel_chain)(y, refs, cfg, noise_power, train_len, test_len, seed, r)
            for (y, r) in jobs
        )
    else:
        chains = [cancel_chain(y, refs, cfg, noise_power, train_len, test_len, seed, r)
                  for (y, r) in jobs]
    return CancelResult(list(chains), noise_power)


def cancel(rx_chains, tx_chains, plan: CarrierPlan, cfg: CancellerConfig,
           noise_power: float, train_len: int, test_len: int, seed: int,
           n_workers: int = 1) -> CancelResult:
    """End-to-end cancellation from the raw TX/RX chain captures."""
    refs = build_cc_references(tx_chains, plan)
    return cancel_with_references(rx_chains, refs, cfg, noise_power,
                                  train_len, test_len, seed, n_workers)
