"""Smoke test for the crossreid extension module."""

import math
import tempfile

import crossreid


def main():
    total, lv, lii, liv = crossreid.combined_loss(math.log(2), math.log(4), math.log(4))
    assert abs(total - (lv + 0.5 * lii + 0.5 * liv)) < 1e-12

    assert crossreid.cmc([[0.5, 0.5, 0.5], [0.5, 0.5, 0.5]], [0, 2]) == [0.5, 0.5, 1.0]

    for train, test in crossreid.make_splits(20, 10, 7):
        assert len(train) == len(test) == 10
        assert not set(train) & set(test)

    cfg = crossreid.Config("train.epochs = 2\ndata.trials = 1\nsynth.k = 4\nsynth.frames = 2\n")
    cfg.set("data.resolution", "16")
    cfg.set("model.conv_channels", "2,3")
    cfg.set("model.feature_dim", "8")
    assert "eval.score" in crossreid.Config.keys()

    with tempfile.TemporaryDirectory() as out:
        (trial, first, final), = crossreid.train(cfg, out)
        assert trial == 0 and math.isfinite(first) and math.isfinite(final)
        mean, per_trial = crossreid.evaluate(cfg, out)
        assert len(mean) == 2 and mean[-1] == 1.0 and per_trial == [mean]

    try:
        crossreid.Config("no.such.key = 1")
    except ValueError as e:
        assert "no.such.key" in str(e)
    else:
        raise AssertionError("unknown key accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
