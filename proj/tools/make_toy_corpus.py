"""Writes the toy Portuguese caption corpus used by the tests and the README walkthrough."""

import argparse
import json
import random

SUBJECTS = ["um cachorro", "um gato", "uma mulher", "um homem", "uma menina", "um menino",
            "um cavalo", "um carro", "um trem", "um barco", "uma vaca", "um ônibus"]
ADJECTIVES = ["marrom", "branco", "preto", "pequeno", "grande", "vermelho"]
VERBS = ["parado", "correndo", "sentado", "andando"]
PLACES = ["na praia", "na rua", "no campo", "na grama", "perto do rio", "em a cidade"]
EXTRAS = ["durante o dia", "sob o sol", "com neve"]


def captions_for(rng, subject, adjective, verb, place):
    main = f"{subject} {adjective} {verb} {place}"
    variants = [
        f"{subject} {verb} {place}",
        f"{subject} {adjective} {place}",
        f"{subject} {adjective} {verb} {place} {rng.choice(EXTRAS)}",
        f"{place} , {subject} {adjective} {verb}",
    ]
    return [main] + variants


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--images", type=int, default=32)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--out", required=True)
    args = parser.parse_args()

    rng = random.Random(args.seed)
    combos = [(s, a, v, p) for s in SUBJECTS for a in ADJECTIVES for v in VERBS for p in PLACES]
    rng.shuffle(combos)
    images, annotations = [], []
    ann_id = 1
    for i, combo in enumerate(combos[: args.images]):
        image_id = 1000 + 7 * i
        images.append({"id": image_id, "file_name": f"toy_{image_id:06d}.jpg", "height": 128, "width": 128})
        for caption in captions_for(rng, *combo):
            annotations.append({"id": ann_id, "image_id": image_id, "caption": caption})
            ann_id += 1
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump({"images": images, "annotations": annotations}, f, ensure_ascii=False, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
