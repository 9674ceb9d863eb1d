#!/usr/bin/env python3
"""Reference scorer for the metrics test fixtures.

Implements corpus BLEU (Papineni et al. 2002), ROUGE-L F1 (Lin 2004), and
METEOR with exact + Porter-stem matching (Banerjee & Lavie 2005) directly from
the published algorithm descriptions. Kept independent of the C++ code on
purpose: n-gram bookkeeping uses collections.Counter, LCS uses a full 2D
table, and the Porter stemmer is rule-table driven with measure computed on a
consonant/vowel form string.

Usage: metrics_oracle.py PAIRS.jsonl > expected.json
Each input line: {"id": ..., "candidate": ..., "reference": ...}
"""

import json
import math
import re
import sys
from collections import Counter


def tokenize(s):
    # Lowercase alphanumeric runs; bytes >= 0x80 count as word characters.
    return re.findall(r"[0-9a-zA-Z\x80-￿]+", s.lower())


# ---------------------------------------------------------------------------
# Porter stemmer, original 1980 definition, no later revisions

_VOWELS = "aeiou"


def _cv_form(word):
    # y is a vowel exactly when the preceding letter is a consonant.
    form = ""
    for i, ch in enumerate(word):
        if ch in _VOWELS:
            form += "V"
        elif ch == "y":
            form += "C" if (i == 0 or form[i - 1] == "V") else "V"
        else:
            form += "C"
    return form


def _measure(stem):
    form = _cv_form(stem)
    return len(re.findall(r"V+C", form))


def _has_vowel(stem):
    return "V" in _cv_form(stem)


def _ends_double_consonant(word):
    return (
        len(word) >= 2
        and word[-1] == word[-2]
        and _cv_form(word)[-1] == "C"
    )


def _ends_cvc(word):
    if len(word) < 3:
        return False
    form = _cv_form(word)
    return form[-3:] == "CVC" and word[-1] not in "wxy"


def porter_stem(word):
    w = word
    if len(w) <= 2:
        return w

    # Step 1a
    if w.endswith("sses"):
        w = w[:-2]
    elif w.endswith("ies"):
        w = w[:-2]
    elif w.endswith("ss"):
        pass
    elif w.endswith("s"):
        w = w[:-1]

    # Step 1b
    flag = False
    if w.endswith("eed"):
        if _measure(w[:-3]) > 0:
            w = w[:-1]
    elif w.endswith("ed") and _has_vowel(w[:-2]):
        w = w[:-2]
        flag = True
    elif w.endswith("ing") and _has_vowel(w[:-3]):
        w = w[:-3]
        flag = True
    if flag:
        if w.endswith(("at", "bl", "iz")):
            w += "e"
        elif _ends_double_consonant(w) and not w.endswith(("l", "s", "z")):
            w = w[:-1]
        elif _measure(w) == 1 and _ends_cvc(w):
            w += "e"

    # Step 1c
    if w.endswith("y") and _has_vowel(w[:-1]):
        w = w[:-1] + "i"

    # Step 2 (condition m > 0); longest suffix wins, order encodes that
    for suf, rep in (
        ("ational", "ate"), ("tional", "tion"), ("enci", "ence"),
        ("anci", "ance"), ("izer", "ize"), ("abli", "able"), ("alli", "al"),
        ("entli", "ent"), ("eli", "e"), ("ousli", "ous"), ("ization", "ize"),
        ("ation", "ate"), ("ator", "ate"), ("alism", "al"),
        ("iveness", "ive"), ("fulness", "ful"), ("ousness", "ous"),
        ("aliti", "al"), ("iviti", "ive"), ("biliti", "ble"),
    ):
        if w.endswith(suf):
            if _measure(w[: -len(suf)]) > 0:
                w = w[: -len(suf)] + rep
            break

    # Step 3 (condition m > 0)
    for suf, rep in (
        ("icate", "ic"), ("ative", ""), ("alize", "al"), ("iciti", "ic"),
        ("ical", "ic"), ("ful", ""), ("ness", ""),
    ):
        if w.endswith(suf):
            if _measure(w[: -len(suf)]) > 0:
                w = w[: -len(suf)] + rep
            break

    # Step 4 (condition m > 1; "ion" additionally needs a stem in s/t)
    for suf in (
        "al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement",
        "ment", "ent", "ion", "ou", "ism", "ate", "iti", "ous", "ive", "ize",
    ):
        if w.endswith(suf):
            stem = w[: -len(suf)]
            if suf == "ion":
                if stem.endswith(("s", "t")) and _measure(stem) > 1:
                    w = stem
            elif _measure(stem) > 1:
                w = stem
            break

    # Step 5a
    if w.endswith("e"):
        stem = w[:-1]
        m = _measure(stem)
        if m > 1 or (m == 1 and not _ends_cvc(stem)):
            w = stem

    # Step 5b
    if _measure(w) > 1 and _ends_double_consonant(w) and w.endswith("l"):
        w = w[:-1]
    return w


# ---------------------------------------------------------------------------
# BLEU

def corpus_bleu(cands, refs, n, smooth=False):
    matched = [0] * n
    total = [0] * n
    cand_len = 0
    ref_len = 0
    for cand, ref in zip(cands, refs):
        c = tokenize(cand)
        r = tokenize(ref)
        cand_len += len(c)
        ref_len += len(r)
        for k in range(1, n + 1):
            cg = Counter(tuple(c[i:i + k]) for i in range(len(c) - k + 1))
            rg = Counter(tuple(r[i:i + k]) for i in range(len(r) - k + 1))
            total[k - 1] += sum(cg.values())
            matched[k - 1] += sum(min(v, rg[g]) for g, v in cg.items())
    if cand_len == 0:
        return 0.0
    logs = 0.0
    for k in range(1, n + 1):
        num, den = float(matched[k - 1]), float(total[k - 1])
        if smooth and k > 1:
            num, den = num + 1.0, den + 1.0
        if num <= 0.0 or den <= 0.0:
            return 0.0
        logs += math.log(num / den)
    bp = 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)
    return 100.0 * bp * math.exp(logs / n)


# ---------------------------------------------------------------------------
# ROUGE-L

def _lcs(a, b):
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    return table[len(a)][len(b)]


def corpus_rouge_l(cands, refs):
    if not cands:
        return 0.0
    acc = 0.0
    for cand, ref in zip(cands, refs):
        c = tokenize(cand)
        r = tokenize(ref)
        if not c or not r:
            continue
        lcs = _lcs(c, r)
        if lcs == 0:
            continue
        p = lcs / len(c)
        q = lcs / len(r)
        acc += 2.0 * p * q / (p + q)
    return 100.0 * acc / len(cands)


# ---------------------------------------------------------------------------
# METEOR

def _align(cand, ref, cand_used, ref_used, matches):
    for i, tok in enumerate(cand):
        if cand_used[i]:
            continue
        for j, rtok in enumerate(ref):
            if not ref_used[j] and tok == rtok:
                cand_used[i] = True
                ref_used[j] = True
                matches.append((i, j))
                break


def meteor_pair(cand, ref):
    if not cand or not ref:
        return 0.0
    cand_used = [False] * len(cand)
    ref_used = [False] * len(ref)
    matches = []
    _align(cand, ref, cand_used, ref_used, matches)
    _align([porter_stem(t) for t in cand], [porter_stem(t) for t in ref],
           cand_used, ref_used, matches)
    if not matches:
        return 0.0
    m = float(len(matches))
    p = m / len(cand)
    r = m / len(ref)
    fmean = p * r / (0.9 * p + 0.1 * r)
    matches.sort()
    chunks = 0
    prev = None
    for i, j in matches:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    penalty = 0.5 * (chunks / m) ** 3
    return fmean * (1.0 - penalty)


def corpus_meteor(cands, refs):
    if not cands:
        return 0.0
    return 100.0 * sum(
        meteor_pair(tokenize(c), tokenize(r)) for c, r in zip(cands, refs)
    ) / len(cands)


# ---------------------------------------------------------------------------

def main():
    if len(sys.argv) != 2:
        sys.exit(__doc__)
    cands, refs = [], []
    with open(sys.argv[1]) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            cands.append(row["candidate"])
            refs.append(row["reference"])
    out = {
        "n": len(cands),
        "bleu1": corpus_bleu(cands, refs, 1),
        "bleu2": corpus_bleu(cands, refs, 2),
        "bleu3": corpus_bleu(cands, refs, 3),
        "bleu4": corpus_bleu(cands, refs, 4),
        "meteor": corpus_meteor(cands, refs),
        "rouge_l": corpus_rouge_l(cands, refs),
    }
    json.dump(out, sys.stdout, indent=2)
    print()


if __name__ == "__main__":
    main()
