import numpy as np
import pytest

from amricl.encoder import ClassifierConfig, RelationInput, build_vocab, classifier_loss_and_grad, init_params
from amricl.encoder.classifier import accuracy, init_head, train_relation_classifier
from amricl.representation import RepresentationConfig, prepare_graph_input
from amricl.synthetic import relation_graph
from oracles import central_difference, max_relative_error

LABELS = ("Cause-Effect", "Content-Container")


def separable_inputs(n_per_label=20, seed=0, sent_dim=4, pooling="mean"):
    rng = np.random.default_rng(seed)
    cfg = RepresentationConfig("path_only", pooling)
    out = []
    for k, label in enumerate(LABELS):
        for _ in range(n_per_label):
            g = relation_graph(label, rng, "apple", "box")
            gi = prepare_graph_input(g, "o", "s", cfg)
            sent = rng.normal(size=sent_dim) * 0.3
            sent[0] += 2.0 if k else -2.0
            out.append(RelationInput(gi.lin, gi.pool, label, sent))
    return out


def model_for(inputs, d=8, seed=0):
    vocab = build_vocab([i.lin for i in inputs])
    return init_params(len(vocab), d, 2, seed, 0.0), vocab


def test_separable_set_reaches_high_accuracy():
    inputs = separable_inputs()
    params, vocab = model_for(inputs)
    head, trained = train_relation_classifier(inputs, LABELS, params, vocab, ClassifierConfig(epochs=200))
    assert accuracy(head, trained, vocab, inputs) >= 0.95
    assert head.loss_trace[-1] < head.loss_trace[0]


def test_freeze_keeps_encoder_bit_identical():
    inputs = separable_inputs(5)
    params, vocab = model_for(inputs)
    before = [a.copy() for a in params.arrays()]
    _, out = train_relation_classifier(inputs, LABELS, params, vocab,
                                       ClassifierConfig(freeze_encoder=True, epochs=5))
    assert all(np.array_equal(a, b) for a, b in zip(before, out.arrays()))
    _, tuned = train_relation_classifier(inputs, LABELS, params, vocab, ClassifierConfig(epochs=5))
    assert not np.array_equal(tuned.embedding, params.embedding)


@pytest.mark.parametrize("pooling", ["mean", "concatenation"])
def test_classifier_gradient_matches_finite_differences(pooling):
    inputs = separable_inputs(3, seed=1, pooling=pooling)
    params, vocab = model_for(inputs, seed=1)
    x_dim = inputs[0].pool.shape[0] * params.d + 4
    head = init_head(x_dim, 5, LABELS, seed=2)
    _, gh, ge = classifier_loss_and_grad(head, params, vocab, inputs)
    arrays = head.arrays() + params.arrays()
    numeric = central_difference(lambda: classifier_loss_and_grad(head, params, vocab, inputs, True)[0], arrays)
    assert max_relative_error(gh.arrays() + ge.arrays(), numeric) < 1e-4


def test_classifier_errors():
    inputs = separable_inputs(2)
    params, vocab = model_for(inputs)
    with pytest.raises(ValueError):
        train_relation_classifier([], LABELS, params, vocab)
    with pytest.raises(ValueError):
        train_relation_classifier(inputs, ("Cause-Effect",), params, vocab)
