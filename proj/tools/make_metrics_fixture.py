#!/usr/bin/env python3
"""Writes the 50-pair metrics fixture and its oracle scores.

Usage: make_metrics_fixture.py FIXTURE_DIR
Produces metrics_pairs.jsonl ({"id","candidate","reference"} lines) and
metrics_expected.json (oracle output for the whole corpus).
"""

import json
import os
import subprocess
import sys

PAIRS = [
    # identical
    ("when was the university of chicago founded?",) * 2,
    ("who wrote the origin of species?",) * 2,
    ("what is the capital of norway?",) * 2,
    ("how many moons does jupiter have?",) * 2,
    ("which river flows through cairo?",) * 2,
    # one-word substitutions or drops
    ("when was the eiffel tower built?", "when was the eiffel tower constructed?"),
    ("who discovered penicillin in 1928?", "who discovered penicillin?"),
    ("what is the largest planet?", "what is the biggest planet?"),
    ("where did the battle of hastings occur?", "where did the battle of hastings take place?"),
    ("what does dna stand for?", "what does dna mean?"),
    # reordered
    ("founded when was the university?", "when was the university founded?"),
    ("the nile flows through which country?", "which country does the nile flow through?"),
    ("in what year did the war end?", "the war ended in what year?"),
    ("paris is the capital of which nation?", "which nation has paris as its capital?"),
    ("what language is spoken in brazil?", "in brazil what language is spoken?"),
    # stemming-dependent overlaps
    ("who was governing the province?", "who governed the province?"),
    ("what invention changed communication?", "which inventions changed communications?"),
    ("when were the amendments ratified?", "when was the amendment ratified?"),
    ("how is rainfall measured?", "how are rainfalls measurable?"),
    ("who organized the resistance movement?", "who organizes resistance movements?"),
    # partial overlap
    ("what is the melting point of iron?", "at what temperature does iron melt?"),
    ("who led the expedition to the south pole?", "which explorer reached the south pole first?"),
    ("why did the roman empire collapse?", "what caused the fall of the roman empire?"),
    ("when did construction of the bridge finish?", "in which year was the bridge completed?"),
    ("how many species of penguin exist?", "what number of penguin species are known?"),
    # low overlap
    ("what is the speed of light?", "how fast does sound travel in water?"),
    ("who painted the ceiling?", "when was the fresco restored?"),
    ("which team won the final?", "who scored the opening goal?"),
    ("where is the museum located?", "what time does the library open?"),
    ("what fuels the reactor?", "how deep is the mine shaft?"),
    # disjoint vocabulary
    ("alpha beta gamma delta", "epsilon zeta eta theta"),
    ("one two three four five", "six seven eight nine ten"),
    ("red orange yellow", "green blue violet"),
    ("north south", "east west"),
    ("spring summer autumn", "winter solstice equinox"),
    # degenerate
    ("", "what is the tallest mountain?"),
    ("", "who succeeded the emperor?"),
    ("what?", "what is the answer?"),
    ("the the the the", "the cat sat on the mat"),
    ("question", "question"),
    # realistic mixed
    ("when did norway gain independence from sweden?", "in what year did norway become independent of sweden?"),
    ("who composed the symphony no 9?", "which composer wrote the ninth symphony?"),
    ("what percentage of the atmosphere is nitrogen?", "how much of the atmosphere consists of nitrogen?"),
    ("where was the treaty signed in 1648?", "in which city was the 1648 treaty signed?"),
    ("how long is the great wall of china?", "what is the length of the great wall of china?"),
    ("which element has the atomic number 79?", "what element corresponds to atomic number 79?"),
    ("who was the first woman to win a nobel prize?", "which woman first won a nobel prize?"),
    ("when does the monsoon season begin in india?", "what month does the indian monsoon start?"),
    ("what caused the stock market crash of 1929?", "why did the stock market crash in 1929?"),
    ("how do bees communicate the location of food?", "in what way do bees signal where food is?"),
]


def main():
    out_dir = sys.argv[1] if len(sys.argv) > 1 else "."
    pairs_path = os.path.join(out_dir, "metrics_pairs.jsonl")
    with open(pairs_path, "w") as f:
        for i, (cand, ref) in enumerate(PAIRS):
            f.write(json.dumps(
                {"id": f"pair-{i:04d}", "candidate": cand, "reference": ref}
            ) + "\n")
    oracle = os.path.join(os.path.dirname(os.path.abspath(__file__)),
                          "metrics_oracle.py")
    expected = subprocess.run(
        [sys.executable, oracle, pairs_path],
        check=True, capture_output=True, text=True,
    ).stdout
    with open(os.path.join(out_dir, "metrics_expected.json"), "w") as f:
        f.write(expected)
    print(f"wrote {len(PAIRS)} pairs")


if __name__ == "__main__":
    main()
