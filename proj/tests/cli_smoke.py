"""End-to-end run of the mmcbm command line on a small synthetic cohort."""

import json
import os
import socket
import subprocess
import sys
import tempfile
import time
import urllib.error
import urllib.request

EXE, SRC = sys.argv[1], sys.argv[2]
failures = []


def run(*args, expect=0):
    proc = subprocess.run([EXE, *args], capture_output=True, text=True)
    if proc.returncode != expect:
        failures.append(f"{' '.join(args)}: exit {proc.returncode}, wanted {expect}\n{proc.stderr}")
    return proc


def check(cond, what):
    if not cond:
        failures.append(what)


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def call(port, method, path, body=None, headers=None):
    data = None if body is None else json.dumps(body).encode()
    req = urllib.request.Request(f"http://127.0.0.1:{port}{path}", data=data, method=method,
                                 headers={"Content-Type": "application/json", **(headers or {})})
    try:
        with urllib.request.urlopen(req, timeout=10) as r:
            return r.status, json.loads(r.read())
    except urllib.error.HTTPError as e:
        return e.code, json.loads(e.read())


with tempfile.TemporaryDirectory() as tmp:
    p = lambda name: os.path.join(tmp, name)
    fixture = os.path.join(SRC, "data", "mock_provider.json")

    run("ingest", "synth", "--out", p("cohort.json"), "--seed", "7", "--split-seed", "1")
    check(os.path.exists(p("cohort.emb")), "synth wrote no embedding sidecar")
    run("ingest", "validate", p("cohort.json"))
    run("ingest", "split", p("cohort.json"), "--seed", "4", "--out", p("resplit.json"))
    run("ingest", "validate", p("resplit.json"))

    bad = json.load(open(p("cohort.json")))
    bad["records"][0]["concept_annotations"] = ["FA:no-such-concept"]
    json.dump(bad, open(p("bad.json"), "w"))
    os.link(p("cohort.emb"), p("bad.emb"))
    out = run("ingest", "validate", p("bad.json"), expect=1)
    check("orphan" in (out.stdout + out.stderr).lower(), "orphan annotation not reported")

    run("cav", "train", "--manifest", p("cohort.json"), "--bank-out", p("bank.mmcbm"), "--report", p("cav.csv"))
    rows = open(p("cav.csv")).read().splitlines()
    check(rows[0] == "concept_id,modality,train_acc,test_acc", "cav report header")
    check(len(rows) == 31, f"cav report has {len(rows) - 1} concepts")

    run("train", "--manifest", p("cohort.json"), "--bank", p("bank.mmcbm"), "--out", p("model.mmcbm"))
    cohort = json.load(open(p("cohort.json")))
    test_ids = [pid for pid, s in cohort["splits"].items() if s == "test"]
    pid = sorted(test_ids)[0]

    out = run("predict", "--model", p("model.mmcbm"), "--manifest", p("cohort.json"), "--patient", pid,
              "--k", "5", "--json")
    pred = json.loads(out.stdout)
    check(len(pred["top_k"]) == 5, "predict top_k length")
    check(abs(sum(pred["probabilities"].values()) - 1.0) < 1e-9, "predict probabilities sum")
    key = pred["top_k"][0]["concept_id"]

    out = run("intervene", "--model", p("model.mmcbm"), "--manifest", p("cohort.json"), "--patient", pid,
              "--set", f"{key}=0", "--json")
    check("logit_deltas" in json.loads(out.stdout), "intervene output")
    run("intervene", "--model", p("model.mmcbm"), "--manifest", p("cohort.json"), "--patient", pid,
        "--set", "FA:unknown=0.5", expect=1)

    out = run("eval", "cv", "--manifest", p("cohort.json"), "--json", p("cv.json"), "--csv", p("cv.csv"),
              "--bootstrap", "50")
    cv = json.load(open(p("cv.json")))
    check(cv["subsets"]["MM"]["aggregate"]["macro_f1"] > 0.9, "cv MM macro-F1")
    run("eval", "retrieval", "--manifest", p("cohort.json"), "--k", "10", "--json", p("ret.json"))
    check(json.load(open(p("ret.json")))["k"] == 10, "retrieval k")
    run("eval", "ablate", "--manifest", p("cohort.json"), "--axis", "n_concepts", "--grid", "5,30",
        "--csv", p("abl.csv"))
    check(len(open(p("abl.csv")).read().splitlines()) == 1 + 2 * 4, "ablation csv rows")
    run("eval", "ablate", "--manifest", p("cohort.json"), "--axis", "n_concepts", "--grid", "31", expect=1)

    run("baseline", "train", "--manifest", p("cohort.json"), "--out", p("baseline.mmcbm"))
    run("baseline", "eval", "--manifest", p("cohort.json"), "--json", p("bl.json"), "--bootstrap", "0")
    check("MM" in json.load(open(p("bl.json")))["subsets"], "baseline eval subsets")

    run("concepts", "aggregate", "--phrases", os.path.join(SRC, "data", "cti_phrases.json"),
        "--provider", "mock", "--fixture", fixture, "--out", p("catalogue.json"))
    cat = json.load(open(p("catalogue.json")))
    counts = {}
    for c in cat["concepts"]:
        counts[c["modality"]] = counts.get(c["modality"], 0) + 1
    check(counts == {"FA": 47, "ICGA": 30, "US": 26}, f"aggregated counts {counts}")

    out = run("report", "generate", "--model", p("model.mmcbm"), "--manifest", p("cohort.json"),
              "--patient", pid, "--field", "age=60", "--json", "--provider", "echo")
    rep = json.loads(out.stdout)
    check(rep["available"] and len(rep["inputs"]["top_k"]) == 10, "report generate")

    port = free_port()
    server = subprocess.Popen([EXE, "serve", "--model", p("model.mmcbm"), "--manifest", p("cohort.json"),
                               "--port", str(port), "--edit-token", "smoke", "--provider", "mock",
                               "--fixture", fixture],
                              stdout=subprocess.DEVNULL, stderr=subprocess.PIPE, text=True)
    try:
        for _ in range(100):
            try:
                status, body = call(port, "GET", "/healthz")
                break
            except (urllib.error.URLError, ConnectionError):
                time.sleep(0.1)
        else:
            status, body = 0, {}
        check(status == 200 and body.get("model_loaded"), "serve healthz")
        status, body = call(port, "POST", "/predict", {"patient_id": pid})
        check(status == 200, "serve predict")
        sid = body.get("session_id", "")
        status, body = call(port, "POST", f"/sessions/{sid}/intervene", {"concept_id": key, "value": 0.0})
        check(status == 200 and "logit_deltas" in body, "serve intervene")
        status, _ = call(port, "POST", "/concepts/edits",
                         {"kind": "add", "concept_id": "smoke-finding", "modality": "US", "text": "x",
                          "editor": "smoke"})
        check(status == 401, "serve edit without token")
        status, body = call(port, "POST", "/concepts/edits",
                            {"kind": "add", "concept_id": "smoke-finding", "modality": "US", "text": "x",
                             "editor": "smoke"}, {"Authorization": "Bearer smoke"})
        check(status == 200 and body.get("edit_log_length") == 1, "serve edit with token")
        status, body = call(port, "POST", "/report", {"session_id": sid})
        check(status == 200 and body.get("available"), "serve report")
    finally:
        server.terminate()
        _, err = server.communicate(timeout=10)
    logged = [json.loads(line) for line in err.splitlines() if line.startswith("{")]
    check(len(logged) >= 6, "request log lines")

for f in failures:
    print("FAIL:", f)
print("cli smoke:", "ok" if not failures else f"{len(failures)} failures")
sys.exit(1 if failures else 0)
