"""Scratch tuning script (not part of the package)."""
import sys, time, warnings
warnings.simplefilter("ignore")
import numpy as np
from sivq.corpus import SyntheticSpec, generate_synthetic_corpus
from sivq.perturb import PerturbConfig, sample_perturb_params, shift_voice, perturb_synthetic
from sivq.training import (TrainConfig, train, corpus_code_ids, project_corpus,
                           codebook_utilization, TrainResult, _forward_view)
from sivq.metrics import (contingency, purity_metrics, kmeans, speaker_probe,
                          phone_tokens, build_abx_task, abx_error)
from sivq.model import init_params, quantize_argmax


def perturbed_copy(corpus, pcfg, seed):
    """One random re-voicing per utterance (feature mode)."""
    world = corpus.synthetic
    rng = np.random.default_rng(seed)
    out = []
    for utt in corpus.utterances:
        params = sample_perturb_params(pcfg, rng)
        voice_in = world.voices[utt.speaker_id]
        out.append(world.render_frames(utt.frame_labels,
                                       shift_voice(voice_in, params),
                                       world.spec.noise_std, rng))
    return out


def leak_metrics(ids, labels, speakers, n_phones, k):
    """Within-phone I(speaker; code)/H(speaker), averaged over phones."""
    vals = []
    for ph in range(n_phones):
        sel = labels == ph
        if sel.sum() < 50:
            continue
        t = contingency(ids[sel], speakers[sel], n_phones=16, n_codes=k)
        p = t.counts / t.counts.sum()
        pi, pk = p.sum(1), p.sum(0)
        nz = p > 0
        mi = np.sum(p[nz] * (np.log(p[nz]) - np.log(np.outer(pi, pk)[nz])))
        hs = -np.sum(pi[pi > 0] * np.log(pi[pi > 0]))
        if hs > 0:
            vals.append(mi / hs)
    return float(np.mean(vals))


def run_case(name, noise=0.1, lr=1e-2, steps=1000, warmup=100, seed=3, k=64,
             d=48, tau=0.1, batch_seconds=32.0, n_utts=240, formant_hi=1.4,
             f0_hi=2.0, abx_triples=600, probe_frames=3000):
    pcfg = PerturbConfig(formant_range=(1.0, formant_hi), f0_range=(1.0, f0_hi))
    spec = SyntheticSpec(n_phones=20, n_speakers=16, phone_frequency_skew=1.0,
                         feature_dim=48, noise_std=noise, seed=7,
                         n_utterances=n_utts)
    corpus = generate_synthetic_corpus(spec)
    feats, labels, speakers = corpus.all_frames()
    cfg = TrainConfig(k=k, d=d, hidden_dim=48, n_layers=3, n_frozen=1, tau=tau,
                      batch_seconds=batch_seconds, total_steps=steps,
                      warmup_steps=warmup, lr_peak=lr, lr_final=1e-5, seed=seed)
    t0 = time.time()
    result, log = train(corpus, cfg, pcfg)
    dt = time.time() - t0
    ids = corpus_code_ids(corpus, result)
    util = codebook_utilization(ids, k)
    pm = purity_metrics(contingency(ids, labels, n_phones=20, n_codes=k))
    km = kmeans(feats, k, n_runs=1, seed=0)
    pk = purity_metrics(contingency(km.assignments, labels, n_phones=20, n_codes=k))
    z = project_corpus(corpus, result)
    idx = np.random.default_rng(0).choice(len(labels), size=probe_frames, replace=False)
    init_stack = TrainResult(*init_params(48, 48, 3, 1, k, d, tau=tau, seed=seed), step=0)
    z0 = project_corpus(corpus, init_stack)
    p_init = speaker_probe(z0[idx], speakers[idx], 0)
    p_tr = speaker_probe(z[idx], speakers[idx], 0)
    leak = leak_metrics(ids, labels, speakers, 20, k)
    onehot = np.zeros((len(labels), k)); onehot[np.arange(len(labels)), ids] = 1.0
    p_code = speaker_probe(onehot[idx], speakers[idx], 0)

    # ABX on a perturbed copy: raw features vs trained projections
    pfeats = perturbed_copy(corpus, pcfg, seed=99)
    toks = phone_tokens([u.frame_labels for u in corpus.utterances],
                        [u.speaker_id for u in corpus.utterances])
    task = build_abx_task(toks, abx_triples, 0)
    offs = [0]
    pcat = np.concatenate(pfeats)
    lens = [len(f) for f in pfeats]
    offs = np.cumsum([0] + lens)
    raw_t = [pcat[offs[t.utterance_index]+t.start: offs[t.utterance_index]+t.stop] for t in toks]
    zp = _forward_view(pcat, result.encoder, result.projection, result.codebook)["z"]
    z_t = [zp[offs[t.utterance_index]+t.start: offs[t.utterance_index]+t.stop] for t in toks]
    abx_raw = abx_error(raw_t, task)
    abx_z = abx_error(z_t, task)
    print(f"[{name}] {dt:.0f}s loss={log.records[-1].loss:.3f} util={util:.3f} "
          f"pnmi={pm['pnmi']:.3f} km={pk['pnmi']:.3f} d={pm['pnmi']-pk['pnmi']:+.3f} "
          f"probe {p_init:.3f}->{p_tr:.3f} code_probe={p_code:.3f} leak={leak:.3f} "
          f"abxP_raw w={abx_raw['within']:.3f}/a={abx_raw['across']:.3f} "
          f"abxP_z w={abx_z['within']:.3f}/a={abx_z['across']:.3f}", flush=True)


if __name__ == "__main__":
    for arg in sys.argv[1:]:
        if arg == "E": run_case("E steps2000", steps=2000)
        if arg == "F": run_case("F tau0.2", tau=0.2)
        if arg == "G": run_case("G wide-perturb", formant_hi=2.0, f0_hi=2.0)
        if arg == "H": run_case("H lr2e-2 s1500", lr=2e-2, steps=1500)
        if arg == "I": run_case("I d64", d=64)
        if arg == "J": run_case("J utts480", n_utts=480)

def grid3():
    for d in (12, 16, 24):
        run_case(f"D{d}", d=d)

def grid4():
    import dataclasses
    for depth, d in ((0.6, 48), (1.0, 48), (0.6, 16)):
        run_case_depth(f"depth{depth}-D{d}", depth=depth, d=d)

def run_case_depth(name, depth, **kw):
    global SyntheticSpec
    import functools
    spec_kwargs = dict(transition_depth=depth)
    run_case2(name, spec_kwargs=spec_kwargs, **kw)

def run_case2(name, spec_kwargs=None, noise=0.1, lr=1e-2, steps=1000, warmup=100,
              seed=3, k=64, d=48, tau=0.1, batch_seconds=32.0, n_utts=240,
              formant_hi=1.4, f0_hi=2.0, abx_triples=600, probe_frames=3000):
    pcfg = PerturbConfig(formant_range=(1.0, formant_hi), f0_range=(1.0, f0_hi))
    spec = SyntheticSpec(n_phones=20, n_speakers=16, phone_frequency_skew=1.0,
                         feature_dim=48, noise_std=noise, seed=7,
                         n_utterances=n_utts, **(spec_kwargs or {}))
    corpus = generate_synthetic_corpus(spec)
    feats, labels, speakers = corpus.all_frames()
    cfg = TrainConfig(k=k, d=d, hidden_dim=48, n_layers=3, n_frozen=1, tau=tau,
                      batch_seconds=batch_seconds, total_steps=steps,
                      warmup_steps=warmup, lr_peak=lr, lr_final=1e-5, seed=seed)
    t0 = time.time()
    result, log = train(corpus, cfg, pcfg)
    dt = time.time() - t0
    ids = corpus_code_ids(corpus, result)
    util = codebook_utilization(ids, k)
    pm = purity_metrics(contingency(ids, labels, n_phones=20, n_codes=k))
    km = kmeans(feats, k, n_runs=1, seed=0)
    pk = purity_metrics(contingency(km.assignments, labels, n_phones=20, n_codes=k))
    z = project_corpus(corpus, result)
    idx = np.random.default_rng(0).choice(len(labels), size=probe_frames, replace=False)
    init_stack = TrainResult(*init_params(48, 48, 3, 1, k, d, tau=tau, seed=seed), step=0)
    z0 = project_corpus(corpus, init_stack)
    p_init = speaker_probe(z0[idx], speakers[idx], 0)
    p_tr = speaker_probe(z[idx], speakers[idx], 0)
    leak = leak_metrics(ids, labels, speakers, 20, k)
    pfeats = perturbed_copy(corpus, pcfg, seed=99)
    toks = phone_tokens([u.frame_labels for u in corpus.utterances],
                        [u.speaker_id for u in corpus.utterances])
    task = build_abx_task(toks, abx_triples, 0)
    pcat = np.concatenate(pfeats)
    offs = np.cumsum([0] + [len(f) for f in pfeats])
    raw_t = [pcat[offs[t.utterance_index]+t.start: offs[t.utterance_index]+t.stop] for t in toks]
    zp = _forward_view(pcat, result.encoder, result.projection, result.codebook)["z"]
    z_t = [zp[offs[t.utterance_index]+t.start: offs[t.utterance_index]+t.stop] for t in toks]
    abx_raw = abx_error(raw_t, task)
    abx_z = abx_error(z_t, task)
    print(f"[{name}] {dt:.0f}s loss={log.records[-1].loss:.3f} util={util:.3f} "
          f"pnmi={pm['pnmi']:.3f} km={pk['pnmi']:.3f} d={pm['pnmi']-pk['pnmi']:+.3f} "
          f"probe {p_init:.3f}->{p_tr:.3f} code_probe={p_code if (p_code:=speaker_probe((lambda oh: oh)(np.eye(k)[ids])[idx], speakers[idx], 0)) else 0:.3f} leak={leak:.3f} "
          f"abxP_raw w={abx_raw['within']:.3f}/a={abx_raw['across']:.3f} "
          f"abxP_z w={abx_z['within']:.3f}/a={abx_z['across']:.3f}", flush=True)
