import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def f64(a, requires_grad=False):
    return torch.tensor(np.asarray(a), dtype=torch.float64, requires_grad=requires_grad)


def tiny_config(seed=0, **overrides):
    """A seconds-scale experiment: 32 s segments, T=64, two small experts."""
    from hdformer.config import ExperimentConfig, apply_overrides

    cfg = ExperimentConfig(seed=seed)
    base = {
        "signal.duration_s": 32,
        "signal.record_s": 32,
        "signal.n_subjects": 10,
        "tsa.T": 64,
        "tsa.experts": "T,T/2",
        "encoder.depth": 2,
        "encoder.d_model": 8,
        "encoder.heads": 2,
        "encoder.merge_stages": "1",
        "encoder.head_hidden": 8,
        "train.epochs": 2,
        "train.batch_size": 4,
    }
    base.update(overrides)
    return apply_overrides(cfg, [f"{k}={v}" for k, v in base.items()])


def pytest_terminal_summary(terminalreporter):
    module = __import__("sys").modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])


@pytest.fixture(scope="session")
def surrogate_run():
    """Default experiment (40 subjects x 600 s, five experts) trained once per session."""
    import time

    from hdformer import training
    from hdformer.config import ExperimentConfig

    t0 = time.perf_counter()
    cfg = ExperimentConfig(seed=0)
    data = training.build_segments(training.synth_corpus(cfg), cfg)
    tr, va, te = training.split_subjects(dict(zip(data.subject_ids, data.labels.tolist())), cfg.train.split, cfg.seed)
    model = training.build_model(cfg)
    result = training.train(model, data.subset(tr), cfg, data.subset(va))
    test_report, _ = training.evaluate(model, data.subset(te), cfg.train.threshold, cfg.train.aggregation)
    train_report, _ = training.evaluate(model, data.subset(tr), cfg.train.threshold, cfg.train.aggregation)
    return {
        "cfg": cfg,
        "result": result,
        "test": test_report,
        "train": train_report,
        "seconds": time.perf_counter() - t0,
    }
