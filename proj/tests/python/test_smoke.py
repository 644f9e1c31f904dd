# Copyright 2025-2026 The zssl Authors
#
# Licensed under the Apache License, Version 2.0
"""Smoke tests for the Python module and the command-line pipeline.

Runs standalone (``python3 test_smoke.py``) or under pytest. The ZSSL_BIN
environment variable must point at the pipeline executable.
"""

import json
import math
import os
import subprocess
import sys
import tempfile

import zssl


def test_autograd_roundtrip():
    tape = zssl.Tape()
    x = zssl.Tensor([2, 2], [1.0, 2.0, 3.0, 4.0])
    x.requires_grad = True
    y = zssl.Tensor([2, 2], [5.0, 6.0, 7.0, 8.0])
    loss = tape.sum(tape.mul(x, y))
    tape.backward(loss)
    assert loss.item() == 1 * 5 + 2 * 6 + 3 * 7 + 4 * 8
    assert x.grad == [5.0, 6.0, 7.0, 8.0]


def test_checkpoint_roundtrip():
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "bundle.zssl")
        zssl.save_tensors(path, {"a": zssl.Tensor([3], [1.5, -2.0, 0.25])})
        back = zssl.load_tensors(path)
        assert back["a"].values == [1.5, -2.0, 0.25]


def test_feature_shapes():
    wave = zssl.randn([1, 16000], seed=3, stddev=0.1)
    feats = zssl.mfcc_like(wave, 23, 13)
    assert feats.shape[1] == 39
    assert feats.shape[0] == 98  # 25 ms window, 10 ms hop

    frontend = zssl.FrontendConfig.default(channels=8)
    assert frontend.total_stride() == 320
    params = zssl.frontend_init_params(frontend, seed=1)
    tape = zssl.Tape()
    conv = zssl.frontend_extract(tape, frontend, params, wave)
    assert conv.shape == [frontend.output_length(16000), 8]


def test_encoder_geometry():
    small = zssl.EncoderConfig.small(16)
    assert small.stack_lengths(100) == [100, 50, 25, 13, 25, 50]
    assert zssl.attention_flops_oracle(small, 64) < \
        zssl.transformer_attention_flops_oracle(small, 64)

    tiny = zssl.EncoderConfig.tiny()
    params = zssl.encoder_init_params(tiny, seed=7)
    tape = zssl.Tape()
    x = zssl.randn([40, tiny.input_dim()], seed=11, stddev=0.1)
    out = zssl.encoder_forward(tape, tiny, params, x)
    assert out.shape == [40, tiny.output_dim()]
    assert tape.op_count("softmax") > 0


def test_ctc_and_decoding():
    # Uniform scores over 3 symbols for one frame: loss is exactly ln 3.
    tape = zssl.Tape()
    lp = tape.log_softmax(zssl.Tensor([1, 3], [0.0, 0.0, 0.0]))
    loss, feasible = zssl.ctc_loss(tape, lp, [1])
    assert feasible
    assert abs(loss.item() - math.log(3.0)) < 1e-12

    labels = zssl.text_to_labels("don't stop")
    assert zssl.labels_to_text(labels) == "don't stop"

    lm = zssl.NGramLM.train("cat cat cat", 2)
    assert lm.order() == 2
    assert lm.sequence_log_prob("cat") > lm.sequence_log_prob("czt")

    # A sharply peaked frame sequence decodes identically by greedy and beam.
    peaked = []
    for symbol in (3, 1, 0, 20):
        row = [0.0] * zssl.VOCAB_SIZE
        row[symbol] = 25.0
        peaked.extend(row)
    tape2 = zssl.Tape()
    lp2 = tape2.log_softmax(zssl.Tensor([4, zssl.VOCAB_SIZE], peaked))
    assert zssl.ctc_greedy(lp2) == zssl.ctc_beam_lm(
        lp2, zssl.NGramLM(), beam=8, lm_weight=0.0, length_weight=0.0)

    scores = zssl.wer(["a", "b"], ["a", "c", "b"])
    assert scores["deletions"] == 1 and scores["errors"] == 1
    assert abs(scores["rate"] - 1.0 / 3.0) < 1e-12


def test_kmeans_and_optimizer():
    pts = zssl.Tensor([4, 1], [0.0, 0.1, 10.0, 10.1])
    cb = zssl.kmeans_fit(pts, 2, 10, seed=3)
    lab = zssl.kmeans_label(cb, pts)
    assert lab[0] == lab[1] and lab[2] == lab[3] and lab[0] != lab[2]

    params = {"w": zssl.Tensor([2], [1.0, -1.0])}
    params["w"].requires_grad = True
    tape = zssl.Tape()
    loss = tape.sum(tape.mul(params["w"], params["w"]))
    tape.backward(loss)
    opt = zssl.ScaledAdam()
    opt.step(params, 0.1)
    assert opt.step_count() == 1
    assert params["w"].values != [1.0, -1.0]

    assert zssl.eden_lr(0.045, 0, 0) > zssl.eden_lr(0.045, 50000, 10)


def test_cli_pipeline_exit_codes():
    binary = os.environ["ZSSL_BIN"]
    with tempfile.TemporaryDirectory() as tmp:
        def stage(name, *overrides):
            cmd = [binary, name]
            for kv in overrides:
                cmd += ["--set", kv]
            return subprocess.run(cmd, capture_output=True, text=True)

        data = os.path.join(tmp, "data")
        run = stage("make-data", f"data_dir={data}", "num_utts=6",
                    "min_utt_seconds=1.0", "max_utt_seconds=1.4",
                    "lexicon_size=5", "seed=13")
        assert run.returncode == 0, run.stderr

        labeled = os.path.join(tmp, "labeled.tsv")
        run = stage("kmeans", f"manifest={data}/manifest.tsv", "num_units=4",
                    f"labels_dir={tmp}/labels", f"manifest_out={labeled}",
                    f"codebook_path={tmp}/codebook.zssl", "seed=13")
        assert run.returncode == 0, run.stderr

        ckpt = os.path.join(tmp, "model.zssl")
        pretrain_args = (f"manifest={labeled}", "steps=2", "num_units=4",
                         "encoder_profile=tiny", "frontend_channels=8",
                         "max_batch_seconds=4", f"checkpoint_out={ckpt}",
                         "seed=13")
        run = stage("pretrain", *pretrain_args)
        assert run.returncode == 0, run.stderr
        assert os.path.exists(ckpt)

        # Config errors exit with 1.
        run = stage("pretrain", "manifest=/nonexistent/manifest.tsv")
        assert run.returncode == 1
        run = stage("pretrain", "bogus_key=1")
        assert run.returncode == 1

        # Non-finite values abort with 2 and leave no new checkpoint behind.
        bundle = zssl.load_tensors(ckpt)
        poisoned = dict(bundle)
        shape = poisoned["in_proj.w"].shape
        n = 1
        for d in shape:
            n *= d
        poisoned["in_proj.w"] = zssl.Tensor(shape, [float("inf")] * n)
        poison_path = os.path.join(tmp, "poisoned.zssl")
        zssl.save_tensors(poison_path, poisoned)
        out = os.path.join(tmp, "never_written.zssl")
        run = stage("pretrain", *pretrain_args[:-2],
                    f"checkpoint_in={poison_path}", f"checkpoint_out={out}",
                    "steps=4", "seed=13")
        assert run.returncode == 2, (run.returncode, run.stderr)
        assert not os.path.exists(out)

        # The environment seed only fills in when the config stays silent.
        env = dict(os.environ, ZSSL_SEED="99")
        run = subprocess.run(
            [binary, "bench", "--set", "bench_t=32", "--set",
             "encoder_profile=tiny", "--set", "bench_reps=1"],
            capture_output=True, text=True, env=env)
        assert run.returncode == 0, run.stderr
        line = json.loads(run.stdout.strip().splitlines()[-1])
        assert line["flop_ratio"] < 1.0


def main():
    failures = 0
    for name, fn in sorted(globals().items()):
        if not name.startswith("test_"):
            continue
        try:
            fn()
            print(f"PASS {name}")
        except AssertionError as err:
            failures += 1
            print(f"FAIL {name}: {err}")
        except Exception as err:  # noqa: BLE001
            failures += 1
            print(f"ERROR {name}: {err!r}")
    if failures:
        sys.exit(1)


if __name__ == "__main__":
    main()
