// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "commands.hpp"

int main(int argc, char** argv) {
    using namespace mx::cli;
    CLI::App app{"Microscaling block quantization tool"};
    app.fallthrough();
    app.require_subcommand(1);

    GlobalOptions g;
    std::string tie;
    app.add_option("--seed", g.seed, "RNG seed");
    app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);
    app.add_option("--format", g.format, "element format, e.g. mxint8, mxfp4, fp_e3m2");
    app.add_option("--block", g.block, "block size");
    app.add_option("--tie", tie, "tie-breaking rule")->check(CLI::IsMember({"half-away", "half-even"}));

    QuantizeOptions qo;
    auto* quantize = app.add_subcommand("quantize", "quantize a raw tensor into an .mxt file");
    quantize->add_option("input", qo.input, "raw or text tensor")->required();
    quantize->add_option("-o,--output", qo.output, "output .mxt")->required();

    DequantizeOptions dqo;
    auto* dequantize = app.add_subcommand("dequantize", "decode an .mxt file to a tensor");
    dequantize->add_option("input", dqo.input, ".mxt file")->required();
    dequantize->add_option("-o,--output", dqo.output, "output tensor")->required();
    dequantize->add_flag("--binary", dqo.binary, "write RAW1 binary instead of text");

    ConvertOptions co;
    std::string compare;
    auto* convert = app.add_subcommand("convert", "derive a lower-precision .mxt from an anchor");
    convert->add_option("input,--from", co.input, "anchor .mxt")->required();
    convert->add_option("--to,--to-format", co.target, "target format (defaults to --format)");
    convert->add_option("-o,--output", co.output, "output .mxt")->required();
    convert->add_option("--compare-direct", compare, "source tensor for direct-quantization comparison");

    InspectOptions io;
    std::size_t dump = 0;
    auto* inspect = app.add_subcommand("inspect", "print header and histograms of an .mxt file");
    inspect->add_option("input", io.input, ".mxt file")->required();
    auto* dump_opt = inspect->add_option("--dump-block", dump, "print one block's codes and values");

    SweepOptions so;
    std::size_t sweep_block = 0;
    auto* sweep = app.add_subcommand("sweep", "run an MSE or robustness sweep and write CSV");
    sweep->add_option("experiment", so.experiment, "mse-vs-bits | mse-vs-block-size | direct-vs-ss | qat-robustness");
    sweep->add_option("-o,--output", so.output, "output CSV")->required();
    sweep->add_option("--svg", so.svg, "optional SVG chart");
    sweep->add_option("--tensors", so.tensors, "number of random tensors");
    sweep->add_option("--length", so.length, "tensor length (shape 1xN)");
    sweep->add_option("--formats", so.formats, "target formats (default: whole family)")->delimiter(',');
    sweep->add_option("--block-sizes", so.block_sizes, "block sizes for mse-vs-block-size")->delimiter(',');
    auto* sweep_block_opt = sweep->add_option("--sweep-block", sweep_block, "block size for bits sweeps (default 64)");

    QatOptions qa;
    double lr = 0.0;
    auto* qat = app.add_subcommand("qat", "train toy QAT variants and write PTQ curves");
    qat->add_option("--family", qa.family, "mxint | mxfp")->check(CLI::IsMember({"mxint", "mxfp"}));
    qat->add_option("--seeds", qa.seeds, "seeds to run (default: --seed)")->delimiter(',');
    qat->add_option("-o,--output", qa.curve_output, "PTQ curve CSV")->required();
    qat->add_option("--log", qa.log_output, "training log CSV");
    qat->add_option("--export-anchor", qa.export_anchor, "write multi-format weights as <prefix>.w1.mxt/.w2.mxt");
    auto* lr_opt = qat->add_option("--lr", lr, "fixed step size instead of the sweep");
    qat->add_option("--epochs-per-format", qa.epochs_per_format);
    qat->add_option("--steps-per-epoch", qa.steps_per_epoch);
    qat->add_option("--pretrain-epochs", qa.pretrain_epochs);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kBadArguments;
    }
    if (!tie.empty()) g.tie = tie;

    if (*quantize) return cmd_quantize(qo, g, std::cout, std::cerr);
    if (*dequantize) return cmd_dequantize(dqo, g, std::cout, std::cerr);
    if (*convert) {
        if (co.target.empty()) co.target = g.format;
        if (co.target.empty()) {
            std::cerr << "error: convert needs --to or --format\n";
            return kBadArguments;
        }
        if (!compare.empty()) co.compare_direct = compare;
        return cmd_convert(co, g, std::cout, std::cerr);
    }
    if (*inspect) {
        if (dump_opt->count()) io.dump_block = dump;
        return cmd_inspect(io, g, std::cout, std::cerr);
    }
    if (*sweep) {
        if (sweep_block_opt->count()) so.block = sweep_block;
        return cmd_sweep(so, g, std::cout, std::cerr);
    }
    if (*qat) {
        if (lr_opt->count()) qa.lr = lr;
        return cmd_qat(qa, g, std::cout, std::cerr);
    }
    return kBadArguments;
}
