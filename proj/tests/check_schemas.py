"""Runs each rdm verb with --json and validates the output against schemas/."""

import json
import pathlib
import subprocess
import sys
import tempfile

import jsonschema
from referencing import Registry, Resource

rdm, schema_dir = sys.argv[1], pathlib.Path(sys.argv[2])

schemas = {p.name: json.loads(p.read_text()) for p in schema_dir.glob("*.schema.json")}
registry = Registry().with_resources(
    (name, Resource.from_contents(s)) for name, s in schemas.items()
)
failures = 0
VERBS = {"gen", "convert", "transcode", "inspect", "verify", "bench", "stats"}


def run(schema, *args, expect=0):
    global failures
    proc = subprocess.run([rdm, "--json", *args], capture_output=True, text=True)
    label = next(a for a in args if a in VERBS)
    if proc.returncode != expect:
        print(f"FAIL {label}: exit {proc.returncode}, expected {expect}\n{proc.stderr}")
        failures += 1
        return None
    doc = json.loads(proc.stdout)
    try:
        jsonschema.Draft202012Validator(schemas[schema], registry=registry).validate(doc)
    except jsonschema.ValidationError as e:
        print(f"FAIL {label} vs {schema}: {e.message}")
        failures += 1
        return None
    print(f"ok   {label} vs {schema}")
    return doc


with tempfile.TemporaryDirectory() as tmp:
    t = pathlib.Path(tmp)
    small = ["--episodes", "2", "--frames", "12", "--height", "8", "--width", "8"]
    run("gen.schema.json", "gen", str(t / "ds"), *small, "--vision-codec", "delta_ll")
    run("gen.schema.json", "gen", str(t / "none"), "--episodes", "0")
    run("inspect.schema.json", "inspect", str(t / "ds" / "episode_0000.rdm"))
    run("convert.schema.json", "convert", str(t / "ds"), str(t / "dumps"))
    run("transcode.schema.json", "transcode", str(t / "ds"), str(t / "q"), "--vision-codec", "delta_q")
    run("verify.schema.json", "verify", str(t / "ds"), "--reference", str(t / "dumps"))
    run("verify.schema.json", "verify", str(t / "ds" / "episode_0000.rdm"),
        "--reference", str(t / "dumps" / "episode_0001"), expect=1)
    run("bench.schema.json", "--cache-dir", str(t / "cache"), "bench", str(t / "ds"),
        "--batch-size", "2", "--batches", "3")
    run("stats.schema.json", "stats", "--baseline", f"dump={t / 'dumps'}", f"rdm={t / 'ds'}",
        f"q={t / 'q'}")
    run("error.schema.json", "inspect", str(t / "missing.rdm"), expect=2)
    run("error.schema.json", "gen", str(t / "bad"), "--height", "0", expect=2)

sys.exit(1 if failures else 0)
