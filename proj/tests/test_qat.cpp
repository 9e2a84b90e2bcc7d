// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "mx/qat.hpp"

using mx::ElementFormat;
using namespace mx::qat;

namespace {

TrainConfig small_config(std::uint64_t seed = 0) {
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.pretrain_epochs = 2;
    cfg.eval_samples = 256;
    return cfg;
}

// Every parameter of the model as one flat list of references.
std::vector<double*> parameters(ToyModel& m) {
    std::vector<double*> p;
    for (auto* v : {&m.w1.data, &m.b1, &m.w2.data, &m.b2})
        for (double& x : *v) p.push_back(&x);
    return p;
}

std::vector<double> flat(const Gradients& g) {
    std::vector<double> out;
    for (const auto* v : {&g.w1.data, &g.b1, &g.w2.data, &g.b2}) out.insert(out.end(), v->begin(), v->end());
    return out;
}

}  // namespace

TEST(Dataset, DeterministicAndShaped) {
    const auto cfg = small_config();
    const auto a = make_dataset(cfg), b = make_dataset(cfg);
    EXPECT_EQ(a.inputs.data, b.inputs.data);
    EXPECT_EQ(a.targets.data, b.targets.data);
    EXPECT_EQ(a.inputs.rows, 128u);
    EXPECT_EQ(a.inputs.cols, 16u);
    EXPECT_EQ(a.targets.cols, 1u);
    const auto e = make_eval_dataset(cfg);
    EXPECT_EQ(e.size(), 256u);
    EXPECT_NE(e.inputs.data, std::vector<double>(a.inputs.data.begin(), a.inputs.data.end()));
    auto other = cfg;
    other.teacher_seed = 99;
    EXPECT_NE(make_dataset(other).targets.data, a.targets.data);
}

TEST(Dataset, NoiselessTeacherIsRealizable) {
    auto cfg = small_config();
    cfg.noise_sigma = 0.0;
    const auto data = make_dataset(cfg);
    EXPECT_NEAR(eval_loss(teacher_model(cfg), QuantAttachment::none(), data), 0.0, 1e-24);
}

TEST(Forward, ZeroWeightModelLossIsTargetSecondMoment) {
    auto cfg = small_config();
    const auto data = make_dataset(cfg);
    ToyModel z{Matrix(32, 16), std::vector<double>(32, 0.0), Matrix(1, 32), std::vector<double>(1, 0.0)};
    double m2 = 0;
    for (double t : data.targets.data) m2 += t * t;
    m2 /= static_cast<double>(data.targets.data.size());
    EXPECT_NEAR(eval_loss(z, QuantAttachment::none(), data), m2, 1e-15);
    EXPECT_NEAR(eval_loss(z, QuantAttachment::direct(cfg.spec_for(ElementFormat::integer(2))), data), m2, 1e-15);
}

TEST(Forward, DirectEqualsPrequantizedWeights) {
    const auto cfg = small_config();
    const auto model = initial_model(cfg);
    const auto data = make_dataset(cfg);
    for (auto f : {ElementFormat::integer(3), ElementFormat::floating(2, 1)}) {
        const auto att = QuantAttachment::direct(cfg.spec_for(f));
        ToyModel pre = model;
        pre.w1 = Matrix::from_tensor(mx::fake_quantize(model.w1.to_tensor(), cfg.spec_for(f)));
        pre.w2 = Matrix::from_tensor(mx::fake_quantize(model.w2.to_tensor(), cfg.spec_for(f)));
        EXPECT_EQ(eval_loss(model, att, data), eval_loss(pre, QuantAttachment::none(), data));
    }
}

TEST(Forward, EightBitCloseToFullPrecision) {
    const auto cfg = small_config();
    const auto model = initial_model(cfg);
    const auto data = make_eval_dataset(cfg);
    const double fp = eval_loss(model, QuantAttachment::none(), data);
    const double q8 = eval_loss(model, QuantAttachment::direct(cfg.spec_for(ElementFormat::integer(8))), data);
    const double q2 = eval_loss(model, QuantAttachment::direct(cfg.spec_for(ElementFormat::integer(2))), data);
    EXPECT_TRUE(std::isfinite(q8));
    EXPECT_LT(std::fabs(q8 - fp), std::fabs(q2 - fp));
}

TEST(Attachment, AnchoredValidation) {
    const auto cfg = small_config();
    EXPECT_THROW(QuantAttachment::anchored(cfg.spec_for(ElementFormat::integer(4)), cfg.spec_for(ElementFormat::integer(8))),
                 mx::UpConversionError);
    EXPECT_THROW(QuantAttachment::anchored(cfg.spec_for(ElementFormat::integer(8)), cfg.spec_for(ElementFormat::floating(2, 1))),
                 mx::ConversionError);
    auto other = cfg.spec_for(ElementFormat::integer(4));
    other.block_size = 16;
    EXPECT_THROW(QuantAttachment::anchored(cfg.spec_for(ElementFormat::integer(8)), other), mx::ConversionError);
}

TEST(Attachment, AnchoredAtAnchorFormatEqualsDirect) {
    const auto cfg = small_config(3);
    const auto model = initial_model(cfg);
    const auto a = QuantAttachment::anchored(cfg.spec_for(ElementFormat::integer(8)), cfg.spec_for(ElementFormat::integer(8)));
    const auto d = QuantAttachment::direct(cfg.spec_for(ElementFormat::integer(8)));
    EXPECT_EQ(a.apply(model.w1).data, d.apply(model.w1).data);
    EXPECT_EQ(a.apply(model.w2).data, d.apply(model.w2).data);
}

TEST(Backward, MatchesCentralDifferences) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        auto cfg = small_config(seed);
        cfg.pretrain_epochs = 0;
        ToyModel model = initial_model(cfg);
        const auto data = make_dataset(cfg);
        const auto att = QuantAttachment::none();
        const auto g = flat(backward_ste(model, forward_loss(model, att, data).cache));
        auto params = parameters(model);
        ASSERT_EQ(params.size(), g.size());
        const double h = 1e-5;
        double worst = 0;
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double saved = *params[i];
            *params[i] = saved + h;
            const double up = eval_loss(model, att, data);
            *params[i] = saved - h;
            const double down = eval_loss(model, att, data);
            *params[i] = saved;
            const double fd = (up - down) / (2 * h);
            worst = std::max(worst, std::fabs(fd - g[i]) / std::max({std::fabs(fd), std::fabs(g[i]), 1e-6}));
        }
        EXPECT_LT(worst, 1e-4) << "seed " << seed;
    }
}

TEST(Backward, SteUsesQuantizedForwardCache) {
    const auto cfg = small_config(1);
    const auto model = initial_model(cfg);
    const auto data = make_dataset(cfg);
    const auto att = QuantAttachment::direct(cfg.spec_for(ElementFormat::integer(3)));
    const auto fwd = forward_loss(model, att, data);
    ToyModel quantized = model;
    quantized.w1 = fwd.cache.w1_eff;
    quantized.w2 = fwd.cache.w2_eff;
    const auto ref = forward_loss(quantized, QuantAttachment::none(), data);
    EXPECT_EQ(flat(backward_ste(model, fwd.cache)), flat(backward_ste(quantized, ref.cache)));
}

TEST(Backward, DeadPathHasZeroGradient) {
    const auto cfg = small_config();
    ToyModel model = initial_model(cfg);
    for (std::size_t i = 0; i < model.w1.cols; ++i) model.w1(5, i) = 0.0;
    model.b1[5] = 0.0;
    model.w2(0, 5) = 0.0;
    const auto data = make_dataset(cfg);
    const auto g = backward_ste(model, forward_loss(model, QuantAttachment::none(), data).cache);
    for (std::size_t i = 0; i < model.w1.cols; ++i) EXPECT_EQ(g.w1(5, i), 0.0);
    EXPECT_EQ(g.b1[5], 0.0);
}

TEST(AdamW, ZeroGradientZeroDecayLeavesParameters) {
    const auto cfg = small_config();
    ToyModel model = initial_model(cfg);
    const ToyModel before = model;
    auto state = AdamWState::zeros_like(model);
    AdamWParams hp;
    hp.weight_decay = 0.0;
    const auto zero = AdamWState::zeros_like(model).m;
    for (int i = 0; i < 5; ++i) optimizer_step(model, state, zero, hp);
    EXPECT_EQ(model.w1.data, before.w1.data);
    EXPECT_EQ(model.b2, before.b2);
}

TEST(AdamW, FirstStepMovesByStepSize) {
    const auto cfg = small_config();
    ToyModel model = initial_model(cfg);
    const ToyModel before = model;
    auto state = AdamWState::zeros_like(model);
    AdamWParams hp;
    hp.lr = 1e-3;
    hp.weight_decay = 0.0;
    auto g = AdamWState::zeros_like(model).m;
    for (double& x : g.w1.data) x = 0.3;
    for (double& x : g.b1) x = -2.0;
    optimizer_step(model, state, g, hp);
    // m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps).
    for (std::size_t i = 0; i < model.w1.data.size(); ++i)
        EXPECT_NEAR(before.w1.data[i] - model.w1.data[i], 1e-3 * 0.3 / (0.3 + 1e-8), 1e-15);
    for (std::size_t i = 0; i < model.b1.size(); ++i)
        EXPECT_NEAR(model.b1[i] - before.b1[i], 1e-3 * 2.0 / (2.0 + 1e-8), 1e-15);
    EXPECT_EQ(model.w2.data, before.w2.data);
}

TEST(AdamW, DecayShrinksWeightsNotBiases) {
    const auto cfg = small_config();
    ToyModel model = initial_model(cfg);
    const ToyModel before = model;
    auto state = AdamWState::zeros_like(model);
    AdamWParams hp;
    hp.lr = 1e-2;
    hp.weight_decay = 0.5;
    const auto zero = AdamWState::zeros_like(model).m;
    std::vector<double> prev = model.w1.data;
    for (int step = 0; step < 10; ++step) {
        optimizer_step(model, state, zero, hp);
        for (std::size_t i = 0; i < prev.size(); ++i) {
            if (prev[i] != 0.0) {
                EXPECT_LT(std::fabs(model.w1.data[i]), std::fabs(prev[i]));
            }
            EXPECT_EQ(std::signbit(model.w1.data[i]), std::signbit(prev[i]));
        }
        prev = model.w1.data;
    }
    EXPECT_EQ(model.b1, before.b1);
}

TEST(Schedule, RejectsNonIncreasing) {
    EXPECT_THROW(check_schedule({ElementFormat::integer(8), ElementFormat::integer(4)}), mx::ConversionError);
    EXPECT_THROW(check_schedule({ElementFormat::integer(4), ElementFormat::integer(4)}), mx::ConversionError);
    EXPECT_THROW(check_schedule({}), mx::ConversionError);
    EXPECT_NO_THROW(check_schedule({ElementFormat::integer(2), ElementFormat::integer(4), ElementFormat::integer(8)}));
    auto cfg = small_config();
    cfg.schedule = {ElementFormat::integer(6), ElementFormat::integer(2)};
    EXPECT_THROW(train_run(Variant::multi_format(), cfg), mx::ConversionError);
    EXPECT_THROW(train_run(Variant::multi_format_anchored(ElementFormat::integer(8)), cfg), mx::ConversionError);
}

TEST(TrainRun, ZeroEpochsReturnsStart) {
    auto cfg = small_config();
    cfg.epochs_per_format = 0;
    const auto start = initial_model(cfg);
    for (const auto& v : {Variant::full_precision(), Variant::single_format(ElementFormat::integer(4)),
                          Variant::multi_format(), Variant::multi_format_anchored(ElementFormat::integer(8))}) {
        const auto r = train_run(v, cfg, start, make_dataset(cfg));
        EXPECT_EQ(r.model.w1.data, start.w1.data);
        EXPECT_TRUE(r.log.empty());
    }
}

TEST(TrainRun, MultiFormatSwitchesAtEpochBoundaries) {
    auto cfg = small_config();
    cfg.epochs_per_format = 2;
    const auto r = train_run(Variant::multi_format(), cfg);
    const std::size_t per = cfg.epochs_per_format * cfg.steps_per_epoch;
    EXPECT_EQ(r.switch_steps, (std::vector<std::size_t>{per, 2 * per, 3 * per}));
    ASSERT_EQ(r.log.size(), 4 * per);
    for (std::size_t i = 0; i < r.log.size(); ++i) {
        EXPECT_EQ(r.log[i].step, i);
        EXPECT_EQ(r.log[i].bits, 2 + 2 * static_cast<int>(i / per));
    }
    // The first switch away from 2 bits lowers the loss noticeably.
    double before = 0, after = 0;
    for (std::size_t i = per - 4; i < per; ++i) before += r.log[i].loss;
    for (std::size_t i = per; i < per + 4; ++i) after += r.log[i].loss;
    EXPECT_LT(after, before);
}

TEST(TrainRun, SingleFormatMatchesTotalEpochs) {
    const auto cfg = small_config();
    const auto r = train_run(Variant::single_format(ElementFormat::integer(4)), cfg);
    EXPECT_EQ(r.log.size(), cfg.schedule.size() * cfg.epochs_per_format * cfg.steps_per_epoch);
    EXPECT_TRUE(r.switch_steps.empty());
    for (const auto& row : r.log) EXPECT_EQ(row.format, "mxint4");
}

TEST(TrainRun, Deterministic) {
    const auto cfg = small_config(7);
    const auto a = train_run(Variant::multi_format_anchored(ElementFormat::integer(8)), cfg);
    const auto b = train_run(Variant::multi_format_anchored(ElementFormat::integer(8)), cfg);
    EXPECT_EQ(a.model.w1.data, b.model.w1.data);
    EXPECT_EQ(a.model.b2, b.model.b2);
    ASSERT_EQ(a.log.size(), b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].loss, b.log[i].loss);
}

TEST(TrainRun, DivergenceReportsStep) {
    auto cfg = small_config();
    cfg.optim.lr = 1e300;
    try {
        train_run(Variant::full_precision(), cfg);
        FAIL();
    } catch (const mx::TrainingError& e) {
        EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("full-precision"), std::string::npos);
    }
}

TEST(TrainRun, FullPrecisionSmallStepDecreasesLoss) {
    int improved = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto cfg = small_config(seed);
        cfg.optim.lr = 1e-3;
        cfg.epochs_per_format = 3;
        const auto r = train_run(Variant::full_precision(), cfg);
        const std::size_t n = r.log.size(), w = 16;
        double head = 0, tail = 0;
        for (std::size_t i = 0; i < w; ++i) head += r.log[i].loss, tail += r.log[n - w + i].loss;
        improved += tail < head;
    }
    EXPECT_GE(improved, 4);
}

TEST(Ptq, CurveShapeAndMonotoneEnds) {
    const auto cfg = small_config(2);
    const auto model = initial_model(cfg);
    const auto eval = make_eval_dataset(cfg);
    const auto curve = ptq_sweep(model, int_eval_formats(), cfg, eval);
    ASSERT_EQ(curve.size(), 7u);
    for (std::size_t i = 0; i < curve.size(); ++i) {
        EXPECT_EQ(curve[i].bits, static_cast<int>(i) + 2);
        EXPECT_GE(curve[i].loss, 0.0);
    }
    EXPECT_LE(curve.back().loss, curve.front().loss);
    const auto fcurve = ptq_sweep(model, float_eval_formats(), cfg, eval);
    std::vector<int> bits;
    for (const auto& r : fcurve) bits.push_back(r.bits);
    EXPECT_EQ(bits, (std::vector<int>{4, 5, 6, 7, 8}));
}

TEST(Ptq, TrainingFormatReproducesSelectionLoss) {
    auto cfg = small_config(4);
    cfg.lr_sweep = {1e-3};
    const auto start = initial_model(cfg);
    const auto data = make_dataset(cfg), eval = make_eval_dataset(cfg);
    const auto v = Variant::single_format(ElementFormat::integer(4));
    const auto run = train_best(v, cfg, start, data, eval);
    const auto curve = ptq_sweep(run.result.model, {ElementFormat::integer(4)}, cfg, eval);
    EXPECT_EQ(curve[0].loss, run.selection);
    EXPECT_EQ(run.lr, 1e-3);
}

TEST(Variant, Names) {
    EXPECT_EQ(Variant::full_precision().name(), "full-precision");
    EXPECT_EQ(Variant::single_format(ElementFormat::integer(8)).name(), "single-mxint8");
    EXPECT_EQ(Variant::multi_format().name(), "multi-format");
    EXPECT_EQ(Variant::multi_format_anchored(ElementFormat::integer(8)).name(), "anchored-mxint8");
}
