// SPDX-License-Identifier: Apache-2.0
//
// Subcommand implementations for the `mx` tool. Each returns a process exit
// code and writes diagnostics to `err`.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mx/mx.hpp"

namespace mx::cli {

enum ExitCode : int {
    kOk = 0,
    kBadArguments = 2,
    kInputParse = 3,
    kIoFailure = 4,
    kUpConversion = 5,
};

struct GlobalOptions {
    std::uint64_t seed = 0;
    unsigned threads = 1;
    std::string format;
    std::size_t block = 32;
    std::optional<std::string> tie;
};

namespace detail {

inline TieMode tie_or(const GlobalOptions& g, TieMode fallback) { return g.tie ? parse_tie(*g.tie) : fallback; }

// Maps library exceptions onto the exit-code table.
template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
    try {
        return fn();
    } catch (const UpConversionError& e) {
        err << "error: " << e.what() << '\n';
        return kUpConversion;
    } catch (const ConversionError& e) {
        err << "error: " << e.what() << '\n';
        return kBadArguments;
    } catch (const FormatError& e) {
        err << "error: " << e.what() << '\n';
        return kBadArguments;
    } catch (const IoError& e) {
        err << "error: " << e.what() << '\n';
        return kIoFailure;
    } catch (const ContainerError& e) {
        err << "error: " << e.what() << '\n';
        return kInputParse;
    } catch (const DataError& e) {
        err << "error: " << e.what() << '\n';
        return kInputParse;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kInputParse;
    }
}

inline std::string fmt_double(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------

struct QuantizeOptions {
    std::string input;
    std::string output;
};

inline int cmd_quantize(const QuantizeOptions& o, const GlobalOptions& g, std::ostream& out, std::ostream& err) {
    return detail::guarded(err, [&] {
        if (g.format.empty()) throw FormatError("--format is required; valid names: " + std::string(kValidFormatNames));
        MxFormatSpec spec{parse_format(g.format), g.block, detail::tie_or(g, TieMode::HalfAway)};
        validate(spec);
        const Tensor t = load_raw_tensor(o.input);
        const MxTensor qt = quantize_tensor(t, spec, g.threads);
        const std::size_t bytes = save_mxt(qt, o.output);
        const Tensor rec = dequantize_tensor(qt);
        out << "format=" << format_name(spec.element) << " block=" << spec.block_size << " tie=" << tie_name(spec.tie)
            << '\n'
            << "elements=" << t.size() << " blocks=" << qt.block_count() << " bytes=" << bytes << '\n'
            << "mse=" << detail::fmt_double(mse(t.values, rec.values)) << '\n';
        return kOk;
    });
}

// ---------------------------------------------------------------------------

struct DequantizeOptions {
    std::string input;
    std::string output;
    bool binary = false;
};

inline int cmd_dequantize(const DequantizeOptions& o, const GlobalOptions&, std::ostream& out, std::ostream& err) {
    return detail::guarded(err, [&] {
        const MxTensor qt = load_mxt(o.input);
        const Tensor t = dequantize_tensor(qt);
        save_raw_tensor(t, o.output, o.binary);
        out << "elements=" << t.size() << " shape=" << shape_string(t.shape) << '\n';
        return kOk;
    });
}

// ---------------------------------------------------------------------------

struct ConvertOptions {
    std::string input;
    std::string target;
    std::string output;
    std::optional<std::string> compare_direct;
};

inline int cmd_convert(const ConvertOptions& o, const GlobalOptions& g, std::ostream& out, std::ostream& err) {
    return detail::guarded(err, [&] {
        const ElementFormat target = parse_format(o.target);
        const MxTensor anchor = load_mxt(o.input);
        const TieMode tie = detail::tie_or(g, anchor.spec.tie);
        const auto plan = ConversionPlan::make(anchor.spec.element, target, tie);
        ConversionDiagnostics diag;
        const MxTensor converted = ss_convert(anchor, target, tie, &diag, g.threads);
        const std::size_t bytes = save_mxt(converted, o.output);
        out << "from=" << format_name(plan.source) << " to=" << format_name(plan.target) << '\n'
            << "delta_e=" << plan.delta_e << '\n'
            << "blocks=" << converted.block_count() << " saturated_blocks=" << diag.saturated_blocks.size()
            << " bytes=" << bytes << '\n';
        for (std::size_t b : diag.saturated_blocks) err << "warning: block " << b << " scale saturated at 2^127\n";
        if (o.compare_direct) {
            const Tensor src = load_raw_tensor(*o.compare_direct);
            if (src.shape != anchor.shape) throw DataError("--compare-direct tensor shape does not match the anchor");
            const MxTensor direct = quantize_tensor(src, converted.spec, g.threads);
            std::size_t scale_equal = 0, disagree = 0;
            for (std::size_t b = 0; b < direct.block_count(); ++b) {
                scale_equal += direct.scales[b] == converted.scales[b];
                const auto cd = direct.block_codes(b), cs = converted.block_codes(b);
                for (std::size_t i = 0; i < cd.size(); ++i) disagree += cd[i] != cs[i];
            }
            const Tensor rd = dequantize_tensor(direct), rs = dequantize_tensor(converted);
            out << "scale_equal=" << scale_equal << '/' << direct.block_count() << '\n'
                << "code_disagreements=" << disagree << '/' << src.size() << '\n'
                << "mse_direct=" << detail::fmt_double(mse(src.values, rd.values))
                << " mse_ss=" << detail::fmt_double(mse(src.values, rs.values)) << '\n';
        }
        return kOk;
    });
}

// ---------------------------------------------------------------------------

struct InspectOptions {
    std::string input;
    std::optional<std::size_t> dump_block;
};

inline int cmd_inspect(const InspectOptions& o, const GlobalOptions&, std::ostream& out, std::ostream& err) {
    try {
        const MxTensor qt = load_mxt(o.input);
        validate_structure(qt);
        const auto& f = qt.spec.element;
        out << "magic=MXT1 version=" << kMxtVersion << '\n'
            << "format=" << format_name(f) << " kind=" << (f.is_int() ? "int" : "float") << " bits=" << f.bits();
        if (f.is_float()) out << " exp_bits=" << f.exp_bits() << " man_bits=" << f.man_bits();
        out << '\n'
            << "tie=" << tie_name(qt.spec.tie) << " block=" << qt.spec.block_size << " shape=" << shape_string(qt.shape)
            << '\n'
            << "elements=" << qt.element_count() << " blocks=" << qt.block_count()
            << " bytes=" << mxt_file_size(qt.shape, qt.spec) << '\n';

        std::map<int, std::size_t> scale_hist;
        for (int s : qt.scales) ++scale_hist[s];
        out << "scale histogram (shared_exp: count)\n";
        for (const auto& [s, n] : scale_hist) out << "  " << s << ": " << n << '\n';

        std::map<double, std::size_t> code_hist;
        for (std::size_t b = 0; b < qt.block_count(); ++b)
            for (ElementCode c : qt.block_codes(b)) ++code_hist[decode_element(c, f)];
        out << "code histogram (element value: count)\n";
        for (const auto& [v, n] : code_hist) out << "  " << v << ": " << n << '\n';

        if (o.dump_block) {
            const std::size_t b = *o.dump_block;
            if (b >= qt.block_count()) {
                err << "error: block " << b << " out of range (" << qt.block_count() << " blocks)\n";
                return kBadArguments;
            }
            const auto codes = qt.block_codes(b);
            out << "block " << b << " shared_exp=" << qt.scales[b] << '\n' << "codes=[";
            for (std::size_t i = 0; i < codes.size(); ++i) out << (i ? "," : "") << decode_element(codes[i], f);
            out << "]\nvalues=[";
            for (std::size_t i = 0; i < codes.size(); ++i)
                out << (i ? "," : "") << detail::fmt_double(std::ldexp(decode_element(codes[i], f), qt.scales[b]));
            out << "]\n";
        }
        return kOk;
    } catch (const IoError& e) {
        err << "error: " << e.what() << '\n';
        return kInputParse;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kInputParse;
    }
}

// ---------------------------------------------------------------------------

struct SweepOptions {
    std::string experiment = "mse-vs-bits";
    std::string output;
    std::optional<std::string> svg;
    std::size_t tensors = 100;
    std::size_t length = 1024;
    std::vector<std::string> formats;
    std::vector<std::size_t> block_sizes{16, 32, 64, 128};
    std::optional<std::size_t> block;  // overrides the global default of 64 for this command
};

inline int cmd_sweep(const SweepOptions& o, const GlobalOptions& g, std::ostream& out, std::ostream& err) {
    return detail::guarded(err, [&] {
        sweep::SweepSpec spec;
        spec.experiment = sweep::parse_experiment(o.experiment);
        spec.tensor_count = o.tensors;
        spec.tensor_shape = {1, o.length};
        spec.seed = g.seed;
        spec.threads = g.threads;
        spec.tie = detail::tie_or(g, TieMode::HalfAway);
        if (!g.format.empty()) spec.anchor = parse_format(g.format);
        for (const auto& name : o.formats) spec.formats.push_back(parse_format(name));
        spec.block_sizes = o.block_sizes;
        if (o.block) spec.block_size = *o.block;
        if (spec.tensor_count == 0 || o.length == 0) throw FormatError("--tensors and --length must be positive");
        for (std::size_t k : spec.block_sizes)
            if (k == 0) throw FormatError("block sizes must be positive");
        if (spec.block_size == 0) throw FormatError("block size must be positive");

        qat::TrainConfig qcfg;
        if (spec.experiment == sweep::Experiment::QatRobustness && spec.anchor.is_float())
            qcfg.schedule = {ElementFormat::floating(2, 1), ElementFormat::floating(3, 2), ElementFormat::floating(4, 3)};
        const auto rows = sweep::run_sweep(spec, qcfg);

        std::ofstream csv(o.output, std::ios::trunc);
        if (!csv) throw IoError("cannot open " + o.output + " for writing");
        sweep::write_csv(rows, csv);
        if (o.svg) {
            std::ofstream svg(*o.svg, std::ios::trunc);
            if (!svg) throw IoError("cannot open " + *o.svg + " for writing");
            const std::string metric =
                spec.experiment == sweep::Experiment::DirectVsSS
                    ? "code_disagreement_rate"
                    : (spec.experiment == sweep::Experiment::QatRobustness ? "ptq_loss" : "mse");
            svg << sweep::render_svg(rows, metric);
            if (!svg) throw IoError("write failure on " + *o.svg);
        }
        out << "experiment=" << o.experiment << " rows=" << rows.size() << " csv=" << o.output << '\n';
        return kOk;
    });
}

// ---------------------------------------------------------------------------

struct QatOptions {
    std::string family = "mxint";
    std::vector<std::uint64_t> seeds;  // empty: the global --seed
    std::string curve_output;
    std::optional<std::string> log_output;
    std::optional<std::string> export_anchor;
    std::optional<double> lr;  // fixed step size instead of the sweep
    std::size_t epochs_per_format = 1;
    std::size_t steps_per_epoch = 32;
    std::size_t pretrain_epochs = 50;
};

// Trains full-precision, single-format (one per schedule entry), multi-format
// and anchored multi-format models and writes their PTQ curves.
inline int cmd_qat(const QatOptions& o, const GlobalOptions& g, std::ostream& out, std::ostream& err) {
    return detail::guarded(err, [&] {
        using namespace qat;
        TrainConfig base;
        base.block_size = g.block;
        base.tie = detail::tie_or(g, TieMode::HalfAway);
        base.epochs_per_format = o.epochs_per_format;
        base.steps_per_epoch = o.steps_per_epoch;
        base.pretrain_epochs = o.pretrain_epochs;
        if (o.lr) base.lr_sweep = {*o.lr};
        ElementFormat anchor = ElementFormat::integer(8);
        std::vector<ElementFormat> eval_formats;
        if (o.family == "mxint") {
            eval_formats = int_eval_formats();
        } else if (o.family == "mxfp") {
            base.schedule = {ElementFormat::floating(2, 1), ElementFormat::floating(3, 2), ElementFormat::floating(4, 3)};
            anchor = ElementFormat::floating(4, 3);
            eval_formats = float_eval_formats();
        } else {
            throw FormatError("unknown family '" + o.family + "'; expected mxint or mxfp");
        }
        if (!g.format.empty()) {
            anchor = parse_format(g.format);
            if (anchor.is_int() != (o.family == "mxint")) throw ConversionError("anchor format kind does not match --family");
        }

        std::vector<std::uint64_t> seeds = o.seeds.empty() ? std::vector<std::uint64_t>{g.seed} : o.seeds;
        std::vector<Variant> variants{Variant::full_precision()};
        for (const auto& f : base.schedule) variants.push_back(Variant::single_format(f));
        variants.push_back(Variant::multi_format());
        variants.push_back(Variant::multi_format_anchored(anchor));

        std::ofstream curve(o.curve_output, std::ios::trunc);
        if (!curve) throw IoError("cannot open " + o.curve_output + " for writing");
        std::ofstream log;
        if (o.log_output) {
            log.open(*o.log_output, std::ios::trunc);
            if (!log) throw IoError("cannot open " + *o.log_output + " for writing");
        }

        struct Outcome {
            SweptRun run;
            EvalCurve curve;
        };
        bool first = true;
        for (std::uint64_t seed : seeds) {
            TrainConfig cfg = base;
            cfg.seed = seed;
            cfg.teacher_seed = seed;
            const ToyModel start = initial_model(cfg);
            const Dataset data = make_dataset(cfg);
            const Dataset eval = make_eval_dataset(cfg);
            std::vector<std::optional<Outcome>> results(variants.size());
            parallel_for(variants.size(), g.threads, [&](std::size_t i) {
                SweptRun run = train_best(variants[i], cfg, start, data, eval);
                EvalCurve c = ptq_sweep(run.result.model, eval_formats, cfg, eval);
                results[i] = Outcome{std::move(run), std::move(c)};
            });
            for (std::size_t i = 0; i < variants.size(); ++i) {
                const auto& r = *results[i];
                sweep::write_eval_curve_csv(variants[i].name(), seed, r.curve, curve, first);
                if (o.log_output) sweep::write_train_log_csv(variants[i].name(), seed, r.run.result.log, log, first);
                first = false;
                out << "seed=" << seed << " variant=" << variants[i].name() << " lr=" << r.run.lr
                    << " selection_loss=" << detail::fmt_double(r.run.selection) << '\n';
            }
            if (o.export_anchor) {
                const auto& mf = results[variants.size() - 1]->run.result.model;
                const MxFormatSpec spec = cfg.spec_for(anchor);
                const std::string prefix = *o.export_anchor + (seeds.size() > 1 ? ".seed" + std::to_string(seed) : "");
                save_mxt(quantize_tensor(mf.w1.to_tensor(), spec), prefix + ".w1.mxt");
                save_mxt(quantize_tensor(mf.w2.to_tensor(), spec), prefix + ".w2.mxt");
                out << "exported " << prefix << ".w1.mxt " << prefix << ".w2.mxt\n";
            }
        }
        if (!curve) throw IoError("write failure on " + o.curve_output);
        return kOk;
    });
}

}  // namespace mx::cli
