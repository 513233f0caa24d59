import pytest

from prototext.generator import GeneratorTrainConfig
from prototext.pipeline import PipelineConfig
from prototext.selector import SelectorTrainConfig
from prototext.synth import SyntheticSpec, synth_benchmark

TINY_SPEC = SyntheticSpec(num_entities=12, corpus_size=120, vocab_size=160, seed=13)


@pytest.fixture(scope="session")
def tiny_bench(tmp_path_factory):
    """Small benchmark files shared across pipeline and CLI tests."""
    out = tmp_path_factory.mktemp("bench")
    return synth_benchmark(TINY_SPEC, out)


@pytest.fixture
def tiny_config(tiny_bench, tmp_path):
    def make(**overrides):
        fields = dict(
            corpus_path=tiny_bench["corpus"],
            train_tables_path=tiny_bench["train_tables"],
            test_tables_path=tiny_bench["test_tables"],
            labels_path=tiny_bench["labels"],
            out_dir=str(tmp_path / "run"),
            variant="RET_PS_CA",
            seed=3,
            selector=SelectorTrainConfig(epochs=6, seed=0),
            generator=GeneratorTrainConfig(epochs=4, seed=0),
        )
        fields.update(overrides)
        return PipelineConfig(**fields)

    return make
