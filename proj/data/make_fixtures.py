"""Regenerates the offline fixtures in this directory."""
import json
import re

FA_REPORT = (
    "Arterial and early venous frames show a cluster of dark patches beneath the "
    "subretinal lesion that persists into the venous phase. Across the sequence the "
    "lesion brightens steadily over its whole extent, and the late frames show "
    "staining of the lesion."
)
FA_PHRASES = [
    "Clustered Hypofluorescence During Venous Phase",
    "Globally Increasing Fluorescence Intensity",
    "Late-Stage Staining",
]

COUNTS = {"FA": 47, "ICGA": 30, "US": 26}
FEATURES = {
    "FA": ["hyperfluorescence", "hypofluorescence", "leakage", "staining", "pooling",
           "window defect", "blocked fluorescence", "pinpoint leakage"],
    "ICGA": ["hypercyanescence", "hypocyanescence", "vascular network", "washout",
             "dark rim", "feeder vessel"],
    "US": ["low internal reflectivity", "high internal reflectivity", "dome shape",
           "mushroom shape", "choroidal excavation", "acoustic hollowness",
           "retinal detachment", "orbital shadowing"],
}
QUALIFIERS = ["early", "mid-phase", "late", "diffuse", "focal", "patchy", "peripheral"]
VARIANTS = ["{} seen", "evidence of {}", "{} noted"]


def slug(s):
    return re.sub(r"[^a-z0-9]+", "-", s.lower()).strip("-")


def canonical_names(mod, n):
    out = []
    for q in QUALIFIERS:
        for f in FEATURES[mod]:
            out.append(f"{q.capitalize()} {f}")
    return out[:n]


def main():
    phrases, rules = {}, []
    rules.append({"contains": "cluster of dark patches beneath", "response": json.dumps(FA_PHRASES)})
    for mod, n in COUNTS.items():
        groups, flat = [], []
        for i, name in enumerate(canonical_names(mod, n)):
            members = [name] + [v.format(name.lower()) for v in VARIANTS[: i % 3]]
            groups.append({"canonical": name, "members": members})
            flat.extend(members)
        phrases[mod] = flat
        rules.append({"contains": f"imaging findings for the {mod} modality",
                      "response": json.dumps(groups)})
    rules.append({"contains": "Write a structured diagnostic report",
                  "response": "Patient Information: see request.\nImaging Findings: as listed.\n"
                              "Diagnosis: as predicted.\nRecommendations: clinical follow-up."})
    fixture = {"rules": rules}
    with open("mock_provider.json", "w") as f:
        json.dump(fixture, f, indent=2)
        f.write("\n")
    with open("cti_phrases.json", "w") as f:
        json.dump({"phrases": phrases}, f, indent=2)
        f.write("\n")
    with open("fa_report.txt", "w") as f:
        f.write(FA_REPORT + "\n")

    fa = canonical_names("FA", COUNTS["FA"])
    log = []
    ts = "2026-10-01T09:00:00Z"
    for name in fa[:5]:
        log.append({"kind": "remove", "concept_id": slug(name), "modality": "FA",
                    "editor": "reader-1", "timestamp": ts})
    for i in range(8):
        log.append({"kind": "add", "concept_id": f"fa-expert-finding-{i + 1}", "modality": "FA",
                    "text": f"Expert FA finding {i + 1}", "editor": "reader-1", "timestamp": ts})
    for i in range(4):
        log.append({"kind": "add", "concept_id": f"icga-expert-finding-{i + 1}", "modality": "ICGA",
                    "text": f"Expert ICGA finding {i + 1}", "editor": "reader-2", "timestamp": ts})
    with open("cti_edit_log.json", "w") as f:
        json.dump(log, f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main()
