"""LLM-backed concept generation with schema validation and retries.

One request covers a batch of class names. The endpoint speaks the common
chat-completions protocol; a custom ``transport`` callable (prompt -> str)
can replace HTTP entirely, which is how the tests mock the model.
"""

import json
import os
import re

import requests

from . import GenerationError

ENDPOINT_ENV = "CEMB_EXPORT_LLM_ENDPOINT"
MODEL_ENV = "CEMB_EXPORT_LLM_MODEL"
MAX_RETRIES = 3

PROMPT_TEMPLATE = """You are a visual concept generator. Your task is to generate concise visual concepts that are the most representative of the input class (e.g., "black and white stripes" for a "zebra").

Inputs:
- Number of concepts per class: {n_concepts}
- Class name: {class_names}
- Image types: {image_type}

Output Format:
Return a JSON object:
{{"class_name1":["concept1","concept2","concept3"], "class_name2":[...], ...}}

Rules:
1. Focus on distinctive visual features of the class;
2. Use descriptive adjectives + nouns format;
3. Avoid non-visual features;
4. Each concept should be distinct from others within the same class."""

_FENCE_RE = re.compile(r"^```(?:json)?\s*|\s*```$", re.MULTILINE)


def build_prompt(class_names, k, image_type="Natural"):
    return PROMPT_TEMPLATE.format(
        n_concepts=k, class_names=", ".join(class_names), image_type=image_type
    )


def http_transport(endpoint=None, model=None, timeout=60.0):
    """Returns a prompt -> response-text callable against a chat endpoint."""
    endpoint = endpoint or os.environ.get(ENDPOINT_ENV)
    if not endpoint:
        raise GenerationError(
            f"no LLM endpoint configured (flag --endpoint or ${ENDPOINT_ENV})"
        )
    model = model or os.environ.get(MODEL_ENV, "default")

    def post(prompt):
        response = requests.post(
            endpoint.rstrip("/") + "/chat/completions",
            json={"model": model, "messages": [{"role": "user", "content": prompt}]},
            timeout=timeout,
        )
        response.raise_for_status()
        return response.json()["choices"][0]["message"]["content"]

    return post


def _problems(doc, class_names, k):
    if not isinstance(doc, dict):
        return list(class_names)
    bad = []
    for name in class_names:
        items = doc.get(name)
        if (
            not isinstance(items, list)
            or len(items) != k
            or not all(isinstance(t, str) and t.strip() for t in items)
        ):
            bad.append(name)
    return bad


def parse_response(text, class_names, k):
    """Validated {class: [k concepts]} or a list of offending classes."""
    try:
        doc = json.loads(_FENCE_RE.sub("", text.strip()))
    except json.JSONDecodeError:
        return None, list(class_names)
    bad = _problems(doc, class_names, k)
    if bad:
        return None, bad
    return {name: [t.strip() for t in doc[name]] for name in class_names}, []


def generate_concepts(class_names, k, transport, image_type="Natural"):
    """Ask the model for exactly k concepts per class, retrying malformed output."""
    class_names = list(class_names)
    if not class_names:
        raise GenerationError("no class names given")
    prompt = build_prompt(class_names, k, image_type)
    offending = class_names
    for _ in range(1 + MAX_RETRIES):
        parsed, offending = parse_response(transport(prompt), class_names, k)
        if parsed is not None:
            return parsed
    raise GenerationError(
        f"endpoint kept returning malformed concepts for classes: {', '.join(offending)}"
    )
