import copy

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from gopnet.data import one_hot
from gopnet.errors import ConfigError, NonFiniteLoss, UnfitNormalization
from gopnet.network import GopLayer, GopNetwork, NeuronBlock, NormMode, NormState
from gopnet.operators import ActivationOp, NodalOp, OperatorSet, PoolOp
from gopnet.ridge import solve_ridge
from gopnet.training import (
    Decay,
    LossKind,
    MaxNorm,
    TrainableSelection,
    TrainSpec,
    backward,
    evaluate_metrics,
    finetune,
    init_batchnorm_from_standardization,
    training_loss,
)

PERCEPTRON = OperatorSet(NodalOp.MULTIPLICATION, PoolOp.SUMMATION,
                         ActivationOp.SIGMOID)
FD_H = 1e-6


def build_net(rng, op_set, input_dim=3, width=5, n_classes=2, fit_n=40,
              batchnorm=False, scale_rand=False):
    block = NeuronBlock(op_set, rng.uniform(-1, 1, size=(input_dim, width)),
                        rng.uniform(-1, 1, size=width))
    norm = NormState()
    norm.fit(block.forward(rng.normal(size=(fit_n, input_dim))))
    layer = GopLayer([block], norm)
    if batchnorm:
        init_batchnorm_from_standardization(layer)
        if scale_rand:
            norm.scale = rng.uniform(0.5, 1.5, size=width)
            norm.shift = rng.uniform(-0.5, 0.5, size=width)
    return GopNetwork(input_dim, [layer],
                      rng.normal(size=(width, n_classes)) * 0.3,
                      rng.normal(size=n_classes) * 0.1)


def fd_gradient(net, X, Y, selection, array, index, loss=LossKind.MSE):
    original = array[index]
    array[index] = original + FD_H
    up = training_loss(net, X, Y, selection, loss)
    array[index] = original - FD_H
    down = training_loss(net, X, Y, selection, loss)
    array[index] = original
    return (up - down) / (2.0 * FD_H)


def check_block_grads(net, X, Y, selection, rng, rtol=1e-4, atol=1e-6,
                      loss=LossKind.MSE, n_coords=6):
    grads = backward(net, X, Y, selection, loss)
    for (li, bi), (dW, db) in grads.blocks.items():
        block = net.hidden[li].blocks[bi]
        coords = [tuple(c) for c in
                  zip(rng.integers(0, block.weights.shape[0], n_coords),
                      rng.integers(0, block.weights.shape[1], n_coords))]
        for idx in coords:
            fd = fd_gradient(net, X, Y, selection, block.weights, idx, loss)
            assert np.isclose(fd, dW[idx], rtol=rtol, atol=atol), \
                f"weight {idx} of block ({li},{bi}): fd={fd} analytic={dW[idx]}"
        j = int(rng.integers(0, block.bias.shape[0]))
        fd = fd_gradient(net, X, Y, selection, block.bias, j, loss)
        assert np.isclose(fd, db[j], rtol=rtol, atol=atol)
    if grads.output is not None:
        dB, dbias = grads.output
        idx = (int(rng.integers(0, net.output_weights.shape[0])),
               int(rng.integers(0, net.output_weights.shape[1])))
        fd = fd_gradient(net, X, Y, selection, net.output_weights, idx, loss)
        assert np.isclose(fd, dB[idx], rtol=rtol, atol=atol)
        fd = fd_gradient(net, X, Y, selection, net.output_bias, 0, loss)
        assert np.isclose(fd, dbias[0], rtol=rtol, atol=atol)
    return grads


class TestBackward:
    def test_zero_network_zero_targets_gives_zero_output_grads(self):
        rng = np.random.default_rng(0)
        net = build_net(rng, PERCEPTRON)
        net.output_weights[:] = 0.0
        net.output_bias[:] = 0.0
        X = rng.normal(size=(6, 3))
        Y = np.zeros((6, 2))
        grads = backward(net, X, Y, TrainableSelection.output_only())
        assert_array_equal(grads.output[0], np.zeros_like(net.output_weights))
        assert_array_equal(grads.output[1], np.zeros_like(net.output_bias))

    def test_single_perceptron_hand_chain_rule(self):
        # one input, one sigmoid neuron, identity norm, scalar output
        w, b, v, c = 0.7, -0.2, 1.3, 0.4
        x, t = 0.9, 1.0
        net = GopNetwork(
            1,
            [GopLayer([NeuronBlock(PERCEPTRON, np.array([[w]]), np.array([b]))],
                      NormState(mean=np.zeros(1), std=np.ones(1),
                                scale=np.ones(1), shift=np.zeros(1)))],
            np.array([[v]]), np.array([c]))
        selection = TrainableSelection.all_blocks(net)
        grads = backward(net, np.array([[x]]), np.array([[t]]), selection)
        u = w * x + b
        s = 1.0 / (1.0 + np.exp(-u))
        p = v * s + c
        dp = 2.0 * (p - t)
        ds = s * (1.0 - s)
        assert_allclose(grads.output[0][0, 0], dp * s, rtol=1e-12)
        assert_allclose(grads.output[1][0], dp, rtol=1e-12)
        assert_allclose(grads.blocks[(0, 0)][0][0, 0], dp * v * ds * x, rtol=1e-12)
        assert_allclose(grads.blocks[(0, 0)][1][0], dp * v * ds, rtol=1e-12)

    def test_gaussian_correlation_tanh_block_matches_finite_difference(self):
        rng = np.random.default_rng(7)
        op = OperatorSet(NodalOp.GAUSSIAN, PoolOp.CORRELATION1, ActivationOp.TANH)
        net = build_net(rng, op, input_dim=4, width=6)
        X = rng.normal(size=(12, 4))
        Y = one_hot(rng.integers(0, 2, size=12), 2)
        check_block_grads(net, X, Y, TrainableSelection.all_blocks(net), rng)

    def test_batchnorm_training_mode_matches_finite_difference(self):
        rng = np.random.default_rng(9)
        op = OperatorSet(NodalOp.HARMONIC, PoolOp.SUMMATION, ActivationOp.TANH)
        net = build_net(rng, op, batchnorm=True, scale_rand=True)
        X = rng.normal(size=(16, 3))
        Y = one_hot(rng.integers(0, 2, size=16), 2)
        selection = TrainableSelection.all_blocks(net)
        grads = check_block_grads(net, X, Y, selection, rng)
        norm = net.hidden[0].norm
        dscale, dshift = grads.norm[(0, 0)]
        for j in range(3):
            fd = fd_gradient(net, X, Y, selection, norm.scale, j)
            assert np.isclose(fd, dscale[j], rtol=1e-4, atol=1e-6)
            fd = fd_gradient(net, X, Y, selection, norm.shift, j)
            assert np.isclose(fd, dshift[j], rtol=1e-4, atol=1e-6)

    def test_two_layer_backprop_matches_finite_difference(self):
        rng = np.random.default_rng(3)
        ops = [OperatorSet(NodalOp.DOG, PoolOp.SUMMATION, ActivationOp.SIGMOID),
               OperatorSet(NodalOp.QUADRATIC, PoolOp.CORRELATION2,
                           ActivationOp.INVERSE_ABSOLUTE)]
        fan_in = 3
        layers = []
        for op, width in zip(ops, (5, 4)):
            block = NeuronBlock(op, rng.uniform(-1, 1, (fan_in, width)),
                                rng.uniform(-1, 1, width))
            norm = NormState()
            norm.fit(block.forward(rng.normal(size=(30, fan_in))))
            layers.append(GopLayer([block], norm))
            fan_in = width
        net = GopNetwork(3, layers, rng.normal(size=(4, 2)) * 0.3,
                         np.zeros(2))
        X = rng.normal(size=(10, 3))
        Y = one_hot(rng.integers(0, 2, size=10), 2)
        check_block_grads(net, X, Y, TrainableSelection.all_blocks(net), rng)

    def test_cross_entropy_gradients(self):
        rng = np.random.default_rng(11)
        net = build_net(rng, PERCEPTRON)
        X = rng.normal(size=(9, 3))
        Y = one_hot(rng.integers(0, 2, size=9), 2)
        check_block_grads(net, X, Y, TrainableSelection.all_blocks(net), rng,
                          loss=LossKind.CROSS_ENTROPY)

    def test_every_operator_set_backprops_correctly(self):
        # 4-input / 3-neuron / 2-class network per operator set, 10 random
        # coordinates each against finite differences; kink-adjacent setups
        # are re-drawn
        from gopnet.operators import enumerate_operator_sets, pool_forward_batch

        def kink_adjacent(block, X):
            Z = block.nodal_outputs(X)
            x = pool_forward_batch(block.op_set.pool, Z) + block.bias
            if block.op_set.activation in (ActivationOp.RELU, ActivationOp.ELU):
                if np.abs(x).min() < 1e-3:
                    return True
            if block.op_set.pool is PoolOp.MAXIMUM and Z.shape[1] >= 2:
                top2 = np.sort(Z, axis=1)[:, -2:, :]
                if (top2[:, 1, :] - top2[:, 0, :]).min() < 1e-3:
                    return True
            return False

        for op_set in enumerate_operator_sets():
            net = X = None
            for attempt in range(40):
                rng = np.random.default_rng(50_000 + 131 * op_set.index + attempt)
                block = NeuronBlock(op_set, rng.uniform(-1, 1, (4, 3)),
                                    rng.uniform(-1, 1, 3))
                X = rng.uniform(-1.5, 1.5, size=(10, 4))
                if kink_adjacent(block, X):
                    continue
                norm = NormState()
                norm.fit(block.forward(X))
                net = GopNetwork(4, [GopLayer([block], norm)],
                                 rng.normal(size=(3, 2)) * 0.4,
                                 rng.normal(size=2) * 0.1)
                break
            assert net is not None, f"no kink-free setup for {op_set}"
            Y = one_hot(rng.integers(0, 2, size=10), 2)
            selection = TrainableSelection.all_blocks(net)
            grads = backward(net, X, Y, selection)
            block = net.hidden[0].blocks[0]
            dW, db = grads.blocks[(0, 0)]
            dB, dbias = grads.output
            targets = [(block.weights, dW,
                        (int(rng.integers(4)), int(rng.integers(3))))
                       for _ in range(6)]
            targets.append((block.bias, db, (int(rng.integers(3)),)))
            targets.append((net.output_weights, dB,
                            (int(rng.integers(3)), int(rng.integers(2)))))
            targets.append((net.output_bias, dbias, (0,)))
            targets.append((net.output_bias, dbias, (1,)))
            for array, grad, idx in targets:
                fd = fd_gradient(net, X, Y, selection, array, idx)
                assert abs(fd - grad[idx]) / max(abs(grad[idx]), 1e-6) < 1e-4, \
                    f"{op_set} at {idx}: fd={fd} analytic={grad[idx]}"

    def test_unselected_parameters_absent(self):
        rng = np.random.default_rng(1)
        net = build_net(rng, PERCEPTRON)
        X = rng.normal(size=(5, 3))
        Y = one_hot(rng.integers(0, 2, size=5), 2)
        grads = backward(net, X, Y, TrainableSelection.output_only())
        assert grads.blocks == {} and grads.norm == {}
        assert grads.output is not None

    def test_selection_validates_references(self):
        rng = np.random.default_rng(1)
        net = build_net(rng, PERCEPTRON)
        bad = TrainableSelection(frozenset({(3, 0)}))
        with pytest.raises(ConfigError):
            backward(net, np.ones((2, 3)), np.ones((2, 2)), bad)


class TestFinetune:
    def setup_method(self):
        self.rng = np.random.default_rng(42)
        self.net = build_net(self.rng, PERCEPTRON, input_dim=2, width=4)
        self.X = self.rng.normal(size=(40, 2))
        self.Y = one_hot((self.X[:, 0] > 0).astype(int), 2)

    def test_zero_learning_rate_leaves_parameters_bit_identical(self):
        net = copy.deepcopy(self.net)
        spec = TrainSpec(lr_schedule=((0.0, 3),), seed=5)
        finetune(net, (self.X, self.Y), None, spec,
                 TrainableSelection.all_blocks(net))
        assert_array_equal(net.hidden[0].blocks[0].weights,
                           self.net.hidden[0].blocks[0].weights)
        assert_array_equal(net.output_weights, self.net.output_weights)
        assert_array_equal(net.output_bias, self.net.output_bias)

    def test_frozen_parameters_bit_identical(self):
        rng = np.random.default_rng(0)
        block2 = NeuronBlock(PERCEPTRON, rng.uniform(-1, 1, (2, 3)),
                             rng.uniform(-1, 1, 3))
        net = copy.deepcopy(self.net)
        net.hidden[0].blocks.append(block2)
        net.hidden[0].norm.extend(np.zeros(3), np.ones(3))
        net.output_weights = rng.normal(size=(7, 2))
        before = copy.deepcopy(net)
        spec = TrainSpec(lr_schedule=((0.01, 4),), seed=3)
        selection = TrainableSelection.single_block(0, 1)
        finetune(net, (self.X, self.Y), None, spec, selection)
        assert_array_equal(net.hidden[0].blocks[0].weights,
                           before.hidden[0].blocks[0].weights)
        assert_array_equal(net.hidden[0].blocks[0].bias,
                           before.hidden[0].blocks[0].bias)
        assert not np.array_equal(net.hidden[0].blocks[1].weights,
                                  before.hidden[0].blocks[1].weights)
        assert not np.array_equal(net.output_weights, before.output_weights)

    def test_convex_linear_training_reaches_ridge_optimum(self):
        rng = np.random.default_rng(8)
        net = build_net(rng, PERCEPTRON, input_dim=3, width=5)
        X = rng.normal(size=(60, 3))
        Y = one_hot(rng.integers(0, 2, size=60), 2)
        H = net.hidden_forward(X)
        optimum = float(np.mean((H @ solve_ridge(H, Y, 0.0) - Y) ** 2))
        spec = TrainSpec(lr_schedule=((0.5, 150), (0.1, 150)), batch_size=60,
                         dropout_hidden=0.0, dropout_input=0.0,
                         weight_reg=None, seed=0)
        finetune(net, (X, Y), None, spec, TrainableSelection.output_only())
        final, _ = evaluate_metrics(net, X, Y)
        assert final <= optimum + 1e-3

    def test_fixed_seed_reproduces_trainlog_bit_for_bit(self):
        spec = TrainSpec(lr_schedule=((0.01, 3),), seed=11)
        log1 = finetune(copy.deepcopy(self.net), (self.X, self.Y),
                        (self.X, self.Y), spec,
                        TrainableSelection.all_blocks(self.net))
        log2 = finetune(copy.deepcopy(self.net), (self.X, self.Y),
                        (self.X, self.Y), spec,
                        TrainableSelection.all_blocks(self.net))
        assert log1.as_records() == log2.as_records()

    def test_max_norm_constraint_holds(self):
        net = copy.deepcopy(self.net)
        limit = 0.5
        spec = TrainSpec(lr_schedule=((0.05, 5),), weight_reg=MaxNorm(limit),
                         seed=2)
        finetune(net, (self.X, self.Y), None, spec,
                 TrainableSelection.all_blocks(net))
        rows = np.linalg.norm(net.hidden[0].blocks[0].weights, axis=1)
        assert (rows <= limit + 1e-9).all()
        out_rows = np.linalg.norm(net.output_weights, axis=1)
        assert (out_rows <= limit + 1e-9).all()

    def test_weight_decay_shrinks_weights_at_zero_gradient(self):
        rng = np.random.default_rng(0)
        net = build_net(rng, PERCEPTRON, input_dim=2, width=3)
        X = np.zeros((8, 2))
        Y = np.zeros((8, 2))
        net.output_bias[:] = 0.0
        # zero inputs and zero normalized features: loss gradient is zero for
        # block weights, so only decay acts on them
        net.hidden[0].norm.mean[:] = net.hidden[0].blocks[0].forward(X)[0]
        before = np.abs(net.hidden[0].blocks[0].weights).sum()
        spec = TrainSpec(lr_schedule=((0.1, 3),), dropout_hidden=0.0,
                         dropout_input=0.0, weight_reg=Decay(0.1), seed=0)
        finetune(net, (X, Y), None, spec,
                 TrainableSelection.single_block(0, 0, include_output=False,
                                                 include_norm=False))
        after = np.abs(net.hidden[0].blocks[0].weights).sum()
        assert after < before

    def test_dropout_off_at_inference(self):
        net = copy.deepcopy(self.net)
        spec = TrainSpec(lr_schedule=((0.01, 2),), dropout_hidden=0.5,
                         dropout_input=0.3, seed=1)
        finetune(net, (self.X, self.Y), None, spec,
                 TrainableSelection.all_blocks(net))
        assert_array_equal(net.forward(self.X), net.forward(self.X))

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_non_finite_loss_aborts_with_epoch(self):
        net = copy.deepcopy(self.net)
        net.output_weights[:] = 1e300
        net.output_bias[:] = 1e300
        spec = TrainSpec(lr_schedule=((1e6, 4),), dropout_hidden=0.0,
                         dropout_input=0.0, weight_reg=None, seed=0)
        with pytest.raises(NonFiniteLoss) as err:
            finetune(net, (self.X, self.Y * 1e300), None, spec,
                     TrainableSelection.all_blocks(net))
        assert err.value.epoch == 0

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            TrainSpec(lr_schedule=()).validate()
        with pytest.raises(ConfigError):
            TrainSpec(lr_schedule=((0.001, 5), (0.01, 5))).validate()
        with pytest.raises(ConfigError):
            TrainSpec(lr_schedule=((0.01, 0),)).validate()
        with pytest.raises(ConfigError):
            TrainSpec(dropout_hidden=1.0).validate()
        TrainSpec().validate()


class TestBatchNormInit:
    def test_conversion_preserves_outputs(self):
        rng = np.random.default_rng(5)
        net = build_net(rng, PERCEPTRON, input_dim=3, width=6, fit_n=80)
        layer = net.hidden[0]
        X = rng.normal(size=(100, 3))
        before = layer.forward(X)
        init_batchnorm_from_standardization(layer)
        assert layer.norm.mode is NormMode.BATCHNORM
        after = layer.forward(X)
        assert np.abs(after - before).max() < 1e-12

    def test_scale_shift_start_at_identity(self):
        rng = np.random.default_rng(5)
        net = build_net(rng, PERCEPTRON)
        layer = net.hidden[0]
        init_batchnorm_from_standardization(layer)
        assert_array_equal(layer.norm.scale, np.ones(layer.width))
        assert_array_equal(layer.norm.shift, np.zeros(layer.width))

    def test_idempotent(self):
        rng = np.random.default_rng(5)
        net = build_net(rng, PERCEPTRON)
        layer = net.hidden[0]
        init_batchnorm_from_standardization(layer)
        layer.norm.scale[0] = 2.0
        init_batchnorm_from_standardization(layer)
        assert layer.norm.scale[0] == 2.0

    def test_unfit_raises(self):
        layer = GopLayer([NeuronBlock(PERCEPTRON, np.ones((2, 2)),
                                      np.zeros(2))], NormState())
        with pytest.raises(UnfitNormalization):
            init_batchnorm_from_standardization(layer)

    def test_running_stats_update_only_for_selected_columns(self):
        rng = np.random.default_rng(6)
        net = build_net(rng, PERCEPTRON, input_dim=2, width=3)
        block2 = NeuronBlock(PERCEPTRON, rng.uniform(-1, 1, (2, 3)),
                             rng.uniform(-1, 1, 3))
        net.hidden[0].blocks.append(block2)
        net.hidden[0].norm.extend(np.full(3, 0.25), np.full(3, 2.0))
        net.output_weights = rng.normal(size=(6, 2))
        init_batchnorm_from_standardization(net.hidden[0])
        frozen_mean = net.hidden[0].norm.mean[:3].copy()
        X = rng.normal(size=(30, 2))
        Y = one_hot(rng.integers(0, 2, size=30), 2)
        spec = TrainSpec(lr_schedule=((0.01, 2),), seed=0)
        finetune(net, (X, Y), None, spec, TrainableSelection.single_block(0, 1))
        assert_array_equal(net.hidden[0].norm.mean[:3], frozen_mean)
        assert not np.array_equal(net.hidden[0].norm.mean[3:], np.full(3, 0.25))
