import pytest

from alignfuse.alignment import build_aligned_pair
from alignfuse.model import ModelConfig
from alignfuse.optim import TrainConfig
from alignfuse.synth import SynthSpec, generate_subject
from alignfuse.tokenizer import GreedyTokenizer, HashEmbedder
from alignfuse.training import train_fold


def synth_pairs(spec: SynthSpec, include_pauses: bool = True):
    """Generate and align every subject of a synthetic cohort in memory."""
    tokenizer = GreedyTokenizer(set(spec.vocabulary()))
    embedder = HashEmbedder(spec.dim)
    pairs = []
    for label in ("AD", "CH"):
        for index in range(spec.n_per_class):
            transcript, stream = generate_subject(spec, label, index)
            pairs.append(build_aligned_pair(transcript, stream, embedder,
                                            tokenizer,
                                            include_pauses=include_pauses))
    return pairs


@pytest.fixture(scope="session")
def trained_small_model():
    """A briefly trained 32-dim model plus the pairs it was trained on."""
    spec = SynthSpec(n_per_class=12, dim=32, seed=3)
    pairs = synth_pairs(spec)
    config = ModelConfig.desk_scale(d_model=32, n_heads=4, d_ff=128,
                                    dropout_rate=0.1, seed=0)
    tcfg = TrainConfig.desk_scale(max_epochs=12, warmup_epochs=3, seed=5)
    weights, _ = train_fold(pairs, None, config, tcfg, fold_seed=9,
                            epochs=12, early_stopping=False)
    return config, weights, pairs
