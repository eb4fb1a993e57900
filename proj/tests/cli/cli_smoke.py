"""End-to-end run of the flowcodec command line tool: train, encode, decode, eval, bdrate."""

import json
import os
import subprocess
import sys
import tempfile

EXE = sys.argv[1]
failures = []


def run(*args, expect=0):
    proc = subprocess.run([EXE, *args], capture_output=True, text=True)
    if proc.returncode != expect:
        failures.append(f"{' '.join(args)}: exit {proc.returncode}, expected {expect}\n{proc.stdout}{proc.stderr}")
    return proc


def check(cond, what):
    if not cond:
        failures.append(what)


with tempfile.TemporaryDirectory() as tmp:
    p = lambda *parts: os.path.join(tmp, *parts)

    run("synth", "MOVING_SQUARE", "3", "32", "--vx", "1", "--vy", "0.5", "--output", p("clip"))
    check(os.path.exists(p("clip", "00002.png")), "synth wrote no PNG frames")
    run("synth", "TRANSLATING_TEXTURE", "2", "32", "--output", p("tex.yuv"))
    check(os.path.getsize(p("tex.yuv")) == 2 * 32 * 32 * 3 // 2, "synth yuv size")

    micro = ["--set", "model_preset=toy", "--set", "model.mv_channels=8", "--set", "model.res_channels=8",
             "--set", "model.mv_hyper_channels=4", "--set", "model.res_hyper_channels=4",
             "--set", "model.mcdr_blocks=1", "--set", "model.rf_blocks=1"]
    run("train", "--single", *micro, "--set", "steps=2", "--set", "batch=1", "--set", "crop=32",
        "--set", "clip_len=2", "--output-dir", p("run"))
    for name in ("model.pt", "train_log.csv", "train_config.txt"):
        check(os.path.exists(p("run", name)), f"train did not write {name}")

    enc = run("encode", "--input", p("clip"), "--checkpoint", p("run", "model.pt"), "--gop", "2",
              "--output", p("clip.fvc"), "--recon", p("recon"))
    check("bpp" in enc.stdout, "encode summary lacks bpp")
    stats = json.load(open(p("clip.fvc.json")))
    check(stats.get("schema") == "flowcodec.encode_stats" and len(stats["frames"]) == 3, "encode stats JSON")
    with open(p("clip.fvc"), "rb") as f:
        check(f.read(4) == b"FVC1", "bitstream magic")

    run("decode", "--input", p("clip.fvc"), "--checkpoint", p("run", "model.pt"), "--output", p("decoded"))
    for i in range(3):
        a = open(p("recon", f"{i:05d}.png"), "rb").read()
        b = open(p("decoded", f"{i:05d}.png"), "rb").read()
        check(a == b, f"decoded frame {i} differs from the encoder reconstruction")

    ev = run("eval", "--original", p("clip"), "--bitstream", p("clip.fvc"), "--checkpoint", p("run", "model.pt"),
             "--json", p("eval.json"))
    report = json.load(open(p("eval.json")))
    check(report.get("schema") == "flowcodec.eval", "eval JSON schema")
    check(abs(report["bpp"] - stats["bpp"]) < 1e-9, "eval bpp matches encode bpp")

    curve = "bpp,psnr\n0.1,30\n0.2,33.1\n0.4,35.9\n0.8,38.2\n"
    open(p("a.csv"), "w").write(curve)
    bd = run("bdrate", "--anchor", p("a.csv"), "--test", p("a.csv"))
    check("0.00%" in bd.stdout, f"bdrate of identical curves: {bd.stdout!r}")

    # Error paths: bad arguments and unreadable inputs exit with 1.
    run("encode", "--input", p("missing"), "--checkpoint", p("run", "model.pt"), "--output", p("x.fvc"), expect=1)
    run("decode", "--input", p("a.csv"), "--checkpoint", p("run", "model.pt"), "--output", p("y"), expect=1)
    run("encode", "--input", p("clip"), "--checkpoint", p("run", "model.pt"), "--gop", "0", "--output", p("z.fvc"),
        expect=1)
    run("no-such-command", expect=1)
    run("--help")

for f in failures:
    print("FAIL:", f)
print("cli smoke:", "FAIL" if failures else "PASS")
sys.exit(1 if failures else 0)
