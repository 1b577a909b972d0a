"""cemb-export command line: images | concepts | generate."""

import argparse
import json
import sys
from pathlib import Path

from . import ExporterError
from .concepts import export_concept_embeddings, load_concept_json_texts, load_pool_texts
from .encoders import get_encoder
from .images import export_image_embeddings
from .llm import generate_concepts, http_transport


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cemb-export",
        description="Export image/text embeddings as CEMB files and generate concept texts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    images = sub.add_parser("images", help="embed an image folder (one class per subfolder)")
    images.add_argument("--images", required=True, help="root folder with class subfolders")
    images.add_argument("--model", default="hash", help="'hash' or 'clip-vit-b16'")
    images.add_argument("--dim", type=int, default=512, help="embedding width for the hash encoder")
    images.add_argument("--split", default="", help="split tag recorded in the manifest")
    images.add_argument("--stem", default="train", help="output file stem")
    images.add_argument("-o", "--out", required=True, help="output directory")

    concepts = sub.add_parser("concepts", help="embed concept texts in pool id order")
    source = concepts.add_mutually_exclusive_group(required=True)
    source.add_argument("--pool", help="pool JSON exported by the training core")
    source.add_argument("--concepts", help="concepts JSON {class: [texts]}")
    concepts.add_argument("--model", default="hash")
    concepts.add_argument("--dim", type=int, default=512)
    concepts.add_argument("-o", "--out", required=True, help="output CEMB path")

    generate = sub.add_parser("generate", help="generate concept texts with an LLM")
    generate.add_argument("--classes", required=True, help="comma-separated class names")
    generate.add_argument("--k", type=int, default=3, help="concepts per class")
    generate.add_argument("--image-type", default="Natural", help="e.g. Natural or Dermoscopy")
    generate.add_argument("--endpoint", default=None, help="chat-completions base URL")
    generate.add_argument("--llm-model", default=None)
    generate.add_argument("-o", "--out", required=True, help="output concepts JSON")

    return parser


def _cmd_images(args):
    encoder = get_encoder(args.model, args.dim)
    manifest = export_image_embeddings(args.images, encoder, args.out, args.stem, args.split)
    print(
        f"embedded {len(manifest['labels'])} images "
        f"({len(manifest['class_names'])} classes, dim {manifest['dim']}, "
        f"{len(manifest['skipped'])} skipped) -> {args.out}/{args.stem}.cemb"
    )
    return 0


def _cmd_concepts(args):
    encoder = get_encoder(args.model, args.dim)
    texts = load_pool_texts(args.pool) if args.pool else load_concept_json_texts(args.concepts)
    shape = export_concept_embeddings(texts, encoder, args.out)
    print(f"embedded {shape[0]} concepts (dim {shape[1]}) -> {args.out}")
    return 0


def _cmd_generate(args):
    names = [n.strip() for n in args.classes.split(",") if n.strip()]
    transport = http_transport(args.endpoint, args.llm_model)
    concepts = generate_concepts(names, args.k, transport, args.image_type)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(concepts, fh, indent=2, ensure_ascii=False)
        fh.write("\n")
    print(f"generated {args.k} concepts for {len(names)} classes -> {out}")
    return 0


_COMMANDS = {"images": _cmd_images, "concepts": _cmd_concepts, "generate": _cmd_generate}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ExporterError, OSError) as exc:
        print(f"cemb-export {args.command}: error: {exc}", file=sys.stderr)
        return 2


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
