"""Simulate dysfluent speech, train a small aligner and detect events.

Run with ``python3 demos/02_simulate_and_detect.py``. Takes about half a minute.
"""
import numpy as np

from dysalign.core import DEFAULT_ALPHABET
from dysalign.detect import Detector, DurationPrior, detect_utterance
from dysalign.metrics import corpus_detection_scores
from dysalign.model import AlignerModel
from dysalign.report import extraction_output, render_report
from dysalign.simulate import SimulationConfig, demo_texts, simulate_corpus
from dysalign.train import TrainExample, train


def main():
    texts = demo_texts()
    train_utts = simulate_corpus(texts[:16], SimulationConfig(seed=0))
    held = simulate_corpus(texts[16:], SimulationConfig(seed=7), n=8)

    u = held[0]
    print(f"utterance: {u.text}")
    print("spoken:", " ".join(DEFAULT_ALPHABET.label(s) for s in u.timed.symbols))
    print("ground truth:")
    print(extraction_output(u.annotations))

    model = AlignerModel(np.random.default_rng(0))
    result = train(model, [TrainExample.from_utterance(x) for x in train_utts], steps=200, seed=0)
    print(f"\ntraining objective {result.initial:.1f} -> {result.final:.1f}")

    detector = Detector(model, DurationPrior.fit(x.timed for x in train_utts))
    preds = [detect_utterance(detector, x).annotations for x in held]
    print("\ndetected on the first held-out utterance:")
    print(render_report(preds[0], u.words))

    scores = corpus_detection_scores(preds, [x.annotations for x in held])
    print(f"\nheld-out matching score {scores['matching_score']:.3f}, strict F1 {scores['strict_f1']:.3f}")


if __name__ == "__main__":
    main()
