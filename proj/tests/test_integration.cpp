// SPDX-License-Identifier: Apache-2.0
//
// End-to-end flows across modules: files on disk, anchors exported from
// training, derived formats evaluated back in the model.

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "mx/mx.hpp"

namespace fs = std::filesystem;
using mx::ElementFormat;
using mx::MxFormatSpec;
using mx::TieMode;

namespace {

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("mx_integration_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST(Integration, StoreOneAnchorServeEveryWidth) {
    const auto dir = scratch("anchor");
    const auto src = mx::sweep::random_tensor(42, 0, {16, 96});
    mx::save_raw_tensor(src, (dir / "w.raw").string(), true);

    const MxFormatSpec anchor_spec{ElementFormat::integer(8), 32, TieMode::HalfEven};
    const auto anchor = mx::quantize_tensor(mx::load_raw_tensor((dir / "w.raw").string()), anchor_spec);
    mx::save_mxt(anchor, (dir / "w8.mxt").string());
    const auto stored = mx::load_mxt((dir / "w8.mxt").string());
    ASSERT_EQ(stored, anchor);

    double prev = 0;
    for (int bits = 8; bits >= 2; --bits) {
        const auto low = mx::ss_convert(stored, ElementFormat::integer(bits), TieMode::HalfEven);
        const auto direct = mx::quantize_tensor(src, MxFormatSpec{ElementFormat::integer(bits), 32, TieMode::HalfEven});
        EXPECT_EQ(low.scales, direct.scales);
        const double err = mx::mse(src.values, mx::dequantize_tensor(low).values);
        EXPECT_GT(err, prev);
        prev = err;
        // The derived file is exactly the size a direct quantization would take.
        EXPECT_EQ(mx::encode_mxt(low).size(), mx::encode_mxt(direct).size());
    }
    fs::remove_all(dir);
}

TEST(Integration, FloatAnchorChain) {
    const auto src = mx::sweep::random_tensor(5, 1, {4, 256});
    const auto a = mx::quantize_tensor(src, MxFormatSpec{ElementFormat::floating(4, 3), 32, TieMode::HalfAway});
    const auto e3m2 = mx::ss_convert(a, ElementFormat::floating(3, 2), TieMode::HalfAway);
    const auto e2m1 = mx::ss_convert(a, ElementFormat::floating(2, 1), TieMode::HalfAway);
    const auto direct4 = mx::quantize_tensor(src, MxFormatSpec{ElementFormat::floating(2, 1), 32, TieMode::HalfAway});
    EXPECT_EQ(e2m1.scales, direct4.scales);
    const double m8 = mx::mse(src.values, mx::dequantize_tensor(a).values);
    const double m6 = mx::mse(src.values, mx::dequantize_tensor(e3m2).values);
    const double m4 = mx::mse(src.values, mx::dequantize_tensor(e2m1).values);
    EXPECT_LT(m8, m6);
    EXPECT_LT(m6, m4);
    EXPECT_LE(m4, 2 * mx::mse(src.values, mx::dequantize_tensor(direct4).values));
}

TEST(Integration, ExportedQatAnchorServesLowerWidths) {
    using namespace mx::qat;
    TrainConfig cfg;
    cfg.pretrain_epochs = 5;
    cfg.lr_sweep = {1e-3};
    cfg.eval_samples = 256;
    const auto start = initial_model(cfg);
    const auto data = make_dataset(cfg), eval = make_eval_dataset(cfg);
    const auto run = train_best(Variant::multi_format_anchored(ElementFormat::integer(8)), cfg, start, data, eval);

    const auto spec8 = cfg.spec_for(ElementFormat::integer(8));
    std::stringstream f1, f2;
    mx::write_mxt(mx::quantize_tensor(run.result.model.w1.to_tensor(), spec8), f1);
    mx::write_mxt(mx::quantize_tensor(run.result.model.w2.to_tensor(), spec8), f2);
    const auto w1 = mx::read_mxt(f1), w2 = mx::read_mxt(f2);

    for (int bits : {2, 4, 6, 8}) {
        // Serving path: anchor on disk -> SS -> dequantize.
        ToyModel served = run.result.model;
        served.w1 = Matrix::from_tensor(mx::dequantize_tensor(mx::ss_convert(w1, ElementFormat::integer(bits), cfg.tie)));
        served.w2 = Matrix::from_tensor(mx::dequantize_tensor(mx::ss_convert(w2, ElementFormat::integer(bits), cfg.tie)));
        // Training-time path: the anchored attachment.
        const auto att = QuantAttachment::anchored(spec8, cfg.spec_for(ElementFormat::integer(bits)));
        EXPECT_EQ(eval_loss(served, QuantAttachment::none(), eval), eval_loss(run.result.model, att, eval)) << bits;
    }
}

TEST(Integration, CliPipelineQuantizeConvertDequantize) {
    using namespace mx::cli;
    const auto dir = scratch("cli");
    const auto src = mx::sweep::random_tensor(1, 2, {8, 64});
    mx::save_raw_tensor(src, (dir / "x.txt").string(), false);
    std::ostringstream out, err;
    GlobalOptions g;
    g.format = "mxfp8";
    g.block = 16;
    g.threads = 4;
    ASSERT_EQ(cmd_quantize({(dir / "x.txt").string(), (dir / "a.mxt").string()}, g, out, err), kOk) << err.str();
    ASSERT_EQ(cmd_convert({(dir / "a.mxt").string(), "mxfp4", (dir / "b.mxt").string(), (dir / "x.txt").string()}, g, out, err), kOk)
        << err.str();
    EXPECT_NE(out.str().find("delta_e=6"), std::string::npos);
    ASSERT_EQ(cmd_dequantize({(dir / "b.mxt").string(), (dir / "y.txt").string(), false}, g, out, err), kOk);
    const auto back = mx::load_raw_tensor((dir / "y.txt").string());
    const auto want = mx::dequantize_tensor(
        mx::ss_convert(mx::quantize_tensor(src, MxFormatSpec{ElementFormat::floating(4, 3), 16, TieMode::HalfAway}),
                       ElementFormat::floating(2, 1), TieMode::HalfAway));
    EXPECT_EQ(back, want);
    fs::remove_all(dir);
}
