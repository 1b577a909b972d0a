"""Independent reference implementations used as test oracles.

These are deliberately written with naive loops and without reusing any
code path from the package: brute-force n-gram TF-IDF cosine, and a
central finite-difference gradient.
"""

import math

import numpy as np


def naive_tokens(text):
    out = []
    word = []
    for ch in text.lower():
        if ch.isalnum():
            word.append(ch)
        elif word:
            out.append("".join(word))
            word = []
    if word:
        out.append("".join(word))
    return out


def naive_ngram_counts(tokens, max_n):
    counts = {}
    for n in range(1, max_n + 1):
        for start in range(0, len(tokens) - n + 1):
            term = " ".join(tokens[start : start + n])
            counts[term] = counts.get(term, 0) + 1
    return counts


def naive_tfidf_cosine(text_a, text_b):
    """TF-IDF cosine over the pairwise n-gram vocabulary.

    TF is the raw count; IDF(w) = ln((1+2)/(1+df(w))) + 1 with df taken
    over the two-document corpus.
    """
    tokens_a = naive_tokens(text_a)
    tokens_b = naive_tokens(text_b)
    assert tokens_a and tokens_b
    max_n = max(len(tokens_a), len(tokens_b))
    counts_a = naive_ngram_counts(tokens_a, max_n)
    counts_b = naive_ngram_counts(tokens_b, max_n)
    vocabulary = sorted(set(counts_a) | set(counts_b))
    vec_a = []
    vec_b = []
    for term in vocabulary:
        df = (term in counts_a) + (term in counts_b)
        idf = math.log((1 + 2) / (1 + df)) + 1.0
        vec_a.append(counts_a.get(term, 0) * idf)
        vec_b.append(counts_b.get(term, 0) * idf)
    dot = sum(a * b for a, b in zip(vec_a, vec_b))
    norm_a = math.sqrt(sum(a * a for a in vec_a))
    norm_b = math.sqrt(sum(b * b for b in vec_b))
    return dot / (norm_a * norm_b)


def fd_gradient(loss_fn, array, step=1e-5):
    """Central finite differences of loss_fn() w.r.t. array (perturbed in place)."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    grad_flat = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        up = loss_fn()
        flat[i] = keep - step
        down = loss_fn()
        flat[i] = keep
        grad_flat[i] = (up - down) / (2.0 * step)
    return grad


def rel_err(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def random_phrase(rng, words, n_words):
    idx = rng.choice(len(words), size=n_words, replace=False)
    return " ".join(words[i] for i in idx)
