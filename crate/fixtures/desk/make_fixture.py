#!/usr/bin/env python3
"""Regenerates the desk fixture: manifest.jsonl, wordfreq.tsv.

60 accepted technical documents (12 per intent theme) plus excluded rows that
exercise every ledger reason, the recency gate and a malformed line.
Deterministic: the output only depends on SEED.
"""

import json
import random
from pathlib import Path

SEED = 7
HERE = Path(__file__).resolve().parent

ACRONYMS = {
    "RSRM": "Reusable Solid Rocket Motor",
    "CFD": "Computational Fluid Dynamics",
    "TPS": "Thermal Protection System",
    "RCS": "Reaction Control System",
    "IMU": "Inertial Measurement Unit",
    "SRB": "Solid Rocket Booster",
    "EVA": "Extra Vehicular Activity",
    "LEO": "Low Earth Orbit",
    "FEM": "Finite Element Model",
    "MLI": "Multi Layer Insulation",
    "NDE": "Non Destructive Evaluation",
    "PICA": "Phenolic Impregnated Carbon Ablator",
    "MMOD": "Micro Meteoroid Orbital Debris",
}
OTHER_TERMS = [
    "Kapton-film", "Hall-thruster", "Mach-number", "Reynolds-number",
    "N2O4", "Al2O3", "H2O2", "NH4ClO4", "delta-V", "3-sigma",
]
TERMS = list(ACRONYMS) + OTHER_TERMS

# Common all-caps tokens that the frequency filter must drop.
COMMON_CAPS = {"NASA": 4.6, "USA": 5.1}
# Planted in a single document each: below the document-frequency floor.
RARE = ["XKCDQ", "ZETAPRIME"]

SUBJECTS = [
    "the upper stage", "the crew module", "the test article", "the flight vehicle",
    "the propulsion bay", "the aft skirt", "the heat shield", "the avionics shelf",
    "the return capsule", "the service module", "the payload adapter", "the docking ring",
]

# Sentence frames per intent theme. {a} and {b} are terms, {s} a subject.
FRAMES = {
    "def": [
        "The {a} is the assembly that governs how {s} behaves under load, and the {b} describes its interface.",
        "In this report the {a} denotes a functional element of {s}, while the {b} names the related subsystem.",
        "Engineers define the {a} as the principal element of {s} and treat the {b} as its partner hardware.",
        "The purpose of the {a} on {s} is to protect the structure, and the {b} provides the governing principle.",
        "A {a} works by spreading energy across {s}, which is why the {b} appears in every design review.",
        "The concept of the {a} originates from early studies of {s}, where the {b} was first described.",
    ],
    "num": [
        "The {a} on {s} was rated at 640 kg with a tolerance of 2 percent, and the {b} stayed within range of 15 MPa.",
        "Measured loads on the {a} reached 45 psi, while the {b} of {s} held a tolerance near 3 percent.",
        "The {a} mass budget for {s} is 212 kg, and the {b} operates over a range of 40 to 80 Hz.",
        "At 410 km altitude the {a} of {s} showed 6 percent margin, and the {b} remained under 9 MPa.",
        "Specified tolerance for the {a} is 0.5 percent, with the {b} on {s} limited to 300 kPa.",
        "The {a} delivered 12 percent more output on {s}, keeping the {b} inside a range of 20 psi.",
    ],
    "proc": [
        "The procedure begins by calibrating the {a} on {s}, then the {b} is initialized per the checklist.",
        "Step one of the sequence powers the {a}, and step two verifies the {b} on {s} against the checklist.",
        "Operators follow the calibration procedure for the {a} before the {b} on {s} enters the test sequence.",
        "The checklist schedules the {a} inspection first, and the {b} of {s} is initialized in the next step.",
        "During the startup sequence the {a} is calibrated, after which the {b} on {s} follows the procedure.",
        "The maintenance schedule requires the {a} on {s} to be initialized before the {b} procedure starts.",
    ],
    "comp": [
        "Compared with the {b}, the {a} on {s} offers higher than expected stiffness at the cost of mass.",
        "The trade study weighs the {a} versus the {b} for {s}, and the {a} scores lower than baseline on cost.",
        "Relative to the {b}, the {a} gives {s} better margin, a trade that favors the lighter option.",
        "In comparison, the {a} on {s} runs lower than the {b} in heating, which shapes the trade.",
        "The {a} versus {b} comparison for {s} shows the first design is higher than the second in cost.",
        "Compared against the {b}, the {a} of {s} reduces complexity, relative to the heritage trade.",
    ],
    "anom": [
        "The failure of the {a} on {s} was traced to a crack, and the {b} showed erosion near the joint.",
        "A leak in the {a} caused the anomaly on {s}, and the root cause review also cited the {b}.",
        "Engineers found a fault in the {a} of {s} and mitigated the {b} malfunction with a redesign.",
        "The anomaly report links erosion of the {a} on {s} to a leak path through the {b}.",
        "Mitigation of the {a} crack on {s} required replacing the {b} after the failure review.",
        "The malfunction began when the {a} on {s} developed a fault and the {b} suffered erosion.",
    ],
}
INTENTS = list(FRAMES)

FILLER = [
    "Results were reviewed by the project team.",
    "The data set covers several flight missions.",
    "Further work will extend the analysis to new hardware.",
    "The appendix lists the instrumentation used.",
]

CATEGORIES = [
    "Aeronautics", "Astronautics", "Chemistry and Materials", "Engineering", "Geosciences",
    "Life Sciences", "Mathematical and Computer Sciences", "Physics",
    "Social and Information Sciences", "Space Sciences",
]

CUES = {
    "anom": ["anomal", "failure", "fault", "erosion", "leak", "crack", "malfunction", "mitigat", "root cause"],
    "comp": ["compared", "comparison", "versus", "trade", "higher than", "lower than", "relative to"],
    "proc": ["procedure", "calibrat", "initializ", "sequence", "schedul", "checklist", "step "],
    "num": ["percent", "kg", "km", "psi", "kpa", "mpa", " hz", "tolerance", "range of"],
}


def cue_hits(text):
    low = text.lower()
    return {k: sum(low.count(c) for c in v) for k, v in CUES.items()}


def introduce(term):
    """First mention of an acronym carries its expansion."""
    if term in ACRONYMS:
        return f"{ACRONYMS[term]} ({term})"
    return term


def document(rng, intent, idx):
    terms = rng.sample(TERMS, 8)
    introduced = set()
    sentences = []
    for i in range(22):
        a, b = rng.sample(terms, 2)
        frame = FRAMES[intent][(idx + i) % len(FRAMES[intent])]
        subject = rng.choice(SUBJECTS)
        fa = introduce(a) if a not in introduced else a
        fb = introduce(b) if b not in introduced else b
        introduced.update([a, b])
        sentences.append(frame.format(a=fa, b=fb, s=subject))
        if i % 5 == 4:
            sentences.append(rng.choice(FILLER))
    if idx % 6 == 0:
        sentences.insert(3, "The NASA team in the USA approved the plan.")
    paragraphs = [" ".join(sentences[j:j + 6]) for j in range(0, len(sentences), 6)]
    text = "\n\n".join(paragraphs)
    hits = cue_hits(text)
    if intent == "def":
        assert sum(hits.values()) == 0, hits
    else:
        assert max(hits, key=hits.get) == intent, (intent, hits)
    return text


def record(doc_id, rng, intent, idx, **over):
    rec = {
        "doc_id": doc_id,
        "title": f"{intent.upper()} study {idx}",
        "authors": [f"Author {idx % 7}", f"Author {(idx + 3) % 7}"],
        "category": CATEGORIES[idx % len(CATEGORIES)],
        "publication_year": 2001 + idx % 23,
        "doc_type": "Technical Report" if idx % 3 else "Conference Paper",
        "copyright_status": "public",
        "download_url": f"https://example.invalid/{doc_id}.pdf",
        "text": document(rng, intent, idx),
    }
    rec.update(over)
    return rec


def main():
    rng = random.Random(SEED)
    rows = []
    n = 0
    for intent in INTENTS:
        for k in range(12):
            rows.append(record(f"D{n:03d}", rng, intent, n))
            n += 1
    # Rare terms live in one accepted document each.
    rows[1]["text"] += " The XKCDQ bracket was inspected."
    rows[2]["text"] += " The ZETAPRIME coating was inspected."

    excluded = [
        record("X001", rng, "def", 90, download_url=None),
        record("X002", rng, "num", 91, download_url=""),
        record("D005", rng, "proc", 92, category="Space Sciences"),
        record("D017", rng, "comp", 93, category="Physics"),
        record("X003", rng, "anom", 94, doc_type="Video"),
        record("X004", rng, "def", 95, doc_type="Poster"),
        record("X005", rng, "num", 96, copyright_status="protected"),
        record("X006", rng, "proc", 97, copyright_status="unknown"),
        record("X007", rng, "comp", 98, publication_year=1999),
    ]
    lines = [json.dumps(r, ensure_ascii=False) for r in rows]
    # Interleave exclusions after the accepted originals they may duplicate.
    for i, r in enumerate(excluded):
        lines.insert(20 + 4 * i, json.dumps(r, ensure_ascii=False))
    lines.insert(45, '{"doc_id": "BROKEN", "title": ')
    (HERE / "manifest.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")

    words = {}
    for r in rows:
        for tok in r["text"].replace("\n", " ").split():
            w = tok.strip(".,;:()").lower()
            if w and w.isalpha():
                words[w] = words.get(w, 0) + 1
    terms_lower = {t.lower() for t in TERMS} | {r.lower() for r in RARE}
    freq = []
    for w in sorted(words):
        if w in terms_lower:
            continue
        freq.append((w, 4.0 + min(words[w], 300) / 100.0))
    for w, z in COMMON_CAPS.items():
        freq.append((w.lower(), z))
    freq.sort()
    with open(HERE / "wordfreq.tsv", "w", encoding="utf-8") as f:
        f.write("# word\tzipf\n")
        for w, z in freq:
            f.write(f"{w}\t{z:.2f}\n")


if __name__ == "__main__":
    main()
