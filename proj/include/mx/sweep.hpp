// SPDX-License-Identifier: Apache-2.0
//
// Experiment harness: tensor-level MSE sweeps (bits, block size), direct vs
// Slice-and-Scale agreement, and the toy QAT robustness study. Results are
// flat rows written as CSV, optionally rendered as a small SVG line chart.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mx/convert.hpp"
#include "mx/error.hpp"
#include "mx/format.hpp"
#include "mx/parallel.hpp"
#include "mx/qat.hpp"
#include "mx/quant.hpp"

namespace mx::sweep {

enum class Experiment { MseVsBits, MseVsBlockSize, QatRobustness, DirectVsSS };

inline std::string experiment_name(Experiment e) {
    switch (e) {
        case Experiment::MseVsBits: return "mse-vs-bits";
        case Experiment::MseVsBlockSize: return "mse-vs-block-size";
        case Experiment::QatRobustness: return "qat-robustness";
        case Experiment::DirectVsSS: return "direct-vs-ss";
    }
    return "?";
}

inline Experiment parse_experiment(const std::string& s) {
    for (auto e : {Experiment::MseVsBits, Experiment::MseVsBlockSize, Experiment::QatRobustness, Experiment::DirectVsSS})
        if (experiment_name(e) == s) return e;
    throw FormatError("unknown experiment '" + s +
                      "'; expected mse-vs-bits, mse-vs-block-size, direct-vs-ss or qat-robustness");
}

inline constexpr const char* kDistribution = "normal(0,1)";

struct SweepSpec {
    Experiment experiment = Experiment::MseVsBits;
    std::size_t tensor_count = 100;
    Shape tensor_shape{1, 1024};
    std::uint64_t seed = 0;
    ElementFormat anchor = ElementFormat::integer(8);
    std::vector<ElementFormat> formats;           // empty: every format of the anchor's family
    std::vector<std::size_t> block_sizes{16, 32, 64, 128};
    std::size_t block_size = 64;                  // used by the bits and direct-vs-ss sweeps
    int block_sweep_bits = 4;
    TieMode tie = TieMode::HalfAway;
    unsigned threads = 1;
};

// mxint2..mxint8 or mxfp4..mxfp8, matching the anchor's kind.
inline std::vector<ElementFormat> family_formats(const ElementFormat& anchor) {
    return anchor.is_int() ? qat::int_eval_formats() : qat::float_eval_formats();
}

inline std::vector<ElementFormat> resolved_formats(const SweepSpec& spec) {
    return spec.formats.empty() ? family_formats(spec.anchor) : spec.formats;
}

struct SweepRow {
    std::string experiment;
    std::string format;
    int bits = 0;
    std::size_t block_size = 0;
    std::string path;
    std::string metric;
    double value = 0.0;
    std::uint64_t seed = 0;
};

// Tensor t of a sweep: i.i.d. N(0, 1), seeded independently of every other
// tensor so the sweep can be parallelised.
inline Tensor random_tensor(std::uint64_t seed, std::size_t index, const Shape& shape) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> v(element_count(shape));
    for (double& x : v) x = dist(rng);
    return Tensor(shape, std::move(v));
}

namespace detail {

struct PathMse {
    double direct = 0.0;
    double ss = 0.0;
};

// Average per-tensor MSE of direct quantization and of SS from the anchor.
inline PathMse average_mse(const SweepSpec& spec, const ElementFormat& target, std::size_t block_size) {
    const MxFormatSpec low{target, block_size, spec.tie};
    const MxFormatSpec high{spec.anchor, block_size, spec.tie};
    std::vector<PathMse> per(spec.tensor_count);
    parallel_for(spec.tensor_count, spec.threads, [&](std::size_t t) {
        const Tensor src = random_tensor(spec.seed, t, spec.tensor_shape);
        const Tensor direct = dequantize_tensor(quantize_tensor(src, low));
        const Tensor ss = dequantize_tensor(ss_convert(quantize_tensor(src, high), target, spec.tie));
        per[t] = {mse(src.values, direct.values), mse(src.values, ss.values)};
    });
    PathMse avg;
    for (const auto& p : per) {
        avg.direct += p.direct;
        avg.ss += p.ss;
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, spec.tensor_count));
    return {avg.direct / n, avg.ss / n};
}

inline ElementFormat family_format_with_bits(const ElementFormat& anchor, int bits) {
    for (const auto& f : family_formats(anchor))
        if (f.bits() == bits) return f;
    throw FormatError("no " + std::string(anchor.is_int() ? "mxint" : "mxfp") + " format with " + std::to_string(bits) +
                      " bits");
}

}  // namespace detail

inline std::vector<SweepRow> run_mse_vs_bits(const SweepSpec& spec) {
    std::vector<SweepRow> rows;
    const std::string exp = experiment_name(Experiment::MseVsBits);
    for (const auto& f : resolved_formats(spec)) {
        const auto m = detail::average_mse(spec, f, spec.block_size);
        rows.push_back({exp, format_name(f), f.bits(), spec.block_size, "direct", "mse", m.direct, spec.seed});
        rows.push_back({exp, format_name(f), f.bits(), spec.block_size, "ss", "mse", m.ss, spec.seed});
    }
    return rows;
}

inline std::vector<SweepRow> run_mse_vs_block_size(const SweepSpec& spec) {
    std::vector<SweepRow> rows;
    const std::string exp = experiment_name(Experiment::MseVsBlockSize);
    const ElementFormat f = detail::family_format_with_bits(spec.anchor, spec.block_sweep_bits);
    for (std::size_t k : spec.block_sizes) {
        const auto m = detail::average_mse(spec, f, k);
        rows.push_back({exp, format_name(f), f.bits(), k, "direct", "mse", m.direct, spec.seed});
        rows.push_back({exp, format_name(f), f.bits(), k, "ss", "mse", m.ss, spec.seed});
    }
    return rows;
}

inline std::vector<SweepRow> run_direct_vs_ss(const SweepSpec& spec) {
    std::vector<SweepRow> rows;
    const std::string exp = experiment_name(Experiment::DirectVsSS);
    for (const auto& f : resolved_formats(spec)) {
        const MxFormatSpec high{spec.anchor, spec.block_size, spec.tie};
        const MxFormatSpec low{f, spec.block_size, spec.tie};
        std::vector<DirectVsSsReport> reports(spec.tensor_count);
        parallel_for(spec.tensor_count, spec.threads, [&](std::size_t t) {
            reports[t] = direct_vs_ss_report(random_tensor(spec.seed, t, spec.tensor_shape), high, low);
        });
        std::size_t blocks = 0, equal = 0, elements = 0, disagree = 0, saturated = 0;
        for (const auto& r : reports) {
            for (const auto& b : r.blocks) {
                ++blocks;
                equal += b.scale_equal;
                disagree += b.code_disagreements;
            }
            elements += r.elements;
            saturated += r.saturated_blocks;
        }
        const auto rate = [](std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
        rows.push_back({exp, format_name(f), f.bits(), spec.block_size, "ss", "scale_equal_rate", rate(equal, blocks), spec.seed});
        rows.push_back({exp, format_name(f), f.bits(), spec.block_size, "ss", "code_disagreement_rate", rate(disagree, elements), spec.seed});
        rows.push_back({exp, format_name(f), f.bits(), spec.block_size, "ss", "saturated_blocks", static_cast<double>(saturated), spec.seed});
    }
    return rows;
}

// Toy QAT robustness: full precision, single-format per schedule entry,
// multi-format and anchored multi-format, each PTQ-evaluated on every format
// of the family. The variant name goes in the `path` column.
inline std::vector<SweepRow> run_qat_robustness(const SweepSpec& spec, const qat::TrainConfig& base) {
    using namespace qat;
    TrainConfig cfg = base;
    cfg.seed = spec.seed;
    cfg.teacher_seed = spec.seed;
    cfg.tie = spec.tie;
    const ToyModel start = initial_model(cfg);
    const Dataset data = make_dataset(cfg);
    const Dataset eval = make_eval_dataset(cfg);
    std::vector<Variant> variants{Variant::full_precision()};
    for (const auto& f : cfg.schedule) variants.push_back(Variant::single_format(f));
    variants.push_back(Variant::multi_format());
    variants.push_back(Variant::multi_format_anchored(spec.anchor));

    const auto eval_formats = family_formats(cfg.schedule.front());
    std::vector<std::vector<SweepRow>> per(variants.size());
    parallel_for(variants.size(), spec.threads, [&](std::size_t i) {
        const auto run = train_best(variants[i], cfg, start, data, eval);
        for (const auto& row : ptq_sweep(run.result.model, eval_formats, cfg, eval))
            per[i].push_back({experiment_name(Experiment::QatRobustness), row.format, row.bits, cfg.block_size,
                              variants[i].name(), "ptq_loss", row.loss, spec.seed});
    });
    std::vector<SweepRow> rows;
    for (auto& p : per) rows.insert(rows.end(), p.begin(), p.end());
    return rows;
}

inline std::vector<SweepRow> run_sweep(const SweepSpec& spec, const qat::TrainConfig& qat_cfg = {}) {
    switch (spec.experiment) {
        case Experiment::MseVsBits: return run_mse_vs_bits(spec);
        case Experiment::MseVsBlockSize: return run_mse_vs_block_size(spec);
        case Experiment::DirectVsSS: return run_direct_vs_ss(spec);
        case Experiment::QatRobustness: return run_qat_robustness(spec, qat_cfg);
    }
    return {};
}

// ---------------------------------------------------------------------------
// CSV

inline constexpr const char* kCsvHeader = "experiment,format,bits,block_size,path,metric,value,seed";

inline void validate_row(const SweepRow& r) {
    if (!std::isfinite(r.value))
        throw DataError("non-finite metric " + r.metric + " for " + r.experiment + "/" + r.format + "/" + r.path);
    for (const std::string* s : {&r.experiment, &r.format, &r.path, &r.metric})
        if (s->empty() || s->find_first_of(",\n\"") != std::string::npos)
            throw DataError("invalid CSV field '" + *s + "'");
}

inline std::string format_value(double v) {
    std::ostringstream os;
    os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
    return os.str();
}

// Rows are validated before anything is written.
inline void write_csv(const std::vector<SweepRow>& rows, std::ostream& out) {
    for (const auto& r : rows) validate_row(r);
    out << "# distribution=" << kDistribution << '\n' << kCsvHeader << '\n';
    for (const auto& r : rows)
        out << r.experiment << ',' << r.format << ',' << r.bits << ',' << r.block_size << ',' << r.path << ','
            << r.metric << ',' << format_value(r.value) << ',' << r.seed << '\n';
    if (!out) throw IoError("write failure");
}

inline std::vector<SweepRow> read_csv(std::istream& in) {
    std::vector<SweepRow> rows;
    std::string line;
    bool header = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header) {
            if (line != kCsvHeader) throw ContainerError("unexpected CSV header: " + line);
            header = true;
            continue;
        }
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 8) throw ContainerError("CSV row has " + std::to_string(f.size()) + " fields: " + line);
        rows.push_back({f[0], f[1], std::stoi(f[2]), static_cast<std::size_t>(std::stoull(f[3])), f[4], f[5],
                        std::stod(f[6]), std::stoull(f[7])});
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Minimal SVG line chart: one polyline per path, x = bits (or block size for
// the block-size sweep), y = value on a log10 axis when all values are > 0.

inline std::string render_svg(const std::vector<SweepRow>& rows, const std::string& metric) {
    std::map<std::string, std::vector<std::pair<double, double>>> series;
    std::string experiment;
    for (const auto& r : rows) {
        if (r.metric != metric) continue;
        experiment = r.experiment;
        const double x = r.experiment == experiment_name(Experiment::MseVsBlockSize) ? static_cast<double>(r.block_size)
                                                                                      : static_cast<double>(r.bits);
        series[r.path].emplace_back(x, r.value);
    }
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    bool positive = true;
    for (auto& [name, pts] : series) {
        std::sort(pts.begin(), pts.end());
        for (auto [x, y] : pts) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
            positive = positive && y > 0.0;
        }
    }
    const double W = 640, H = 400, L = 70, R = 160, T = 40, B = 50;
    const auto ty = [&](double y) { return positive ? std::log10(y) : y; };
    double y0 = ty(ymin), y1 = ty(ymax), x0 = xmin, x1 = xmax;
    if (!(x1 > x0)) x1 = x0 + 1;
    if (!(y1 > y0)) y1 = y0 + 1;
    const auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    const auto py = [&](double y) { return H - B - (ty(y) - y0) / (y1 - y0) * (H - T - B); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

    std::ostringstream s;
    s << std::fixed << std::setprecision(2);
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << L << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << experiment << " (" << metric
      << (positive ? ", log10" : "") << ")</text>\n";
    s << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    std::map<double, bool> ticks;
    for (const auto& [name, pts] : series)
        for (auto [x, y] : pts) ticks[x] = true;
    for (const auto& [x, unused] : ticks)
        s << "<text x=\"" << px(x) << "\" y=\"" << H - B + 18 << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">"
          << x << "</text>\n";
    s << "<text x=\"" << L - 6 << "\" y=\"" << H - B << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">"
      << std::setprecision(3) << std::scientific << ymin << "</text>\n";
    s << "<text x=\"" << L - 6 << "\" y=\"" << T + 4 << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">"
      << ymax << "</text>\n" << std::fixed << std::setprecision(2);
    std::size_t ci = 0;
    for (const auto& [name, pts] : series) {
        const char* c = colors[ci % 8];
        s << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
        for (auto [x, y] : pts) s << px(x) << ',' << py(y) << ' ';
        s << "\"/>\n";
        s << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 16 * (ci + 1) << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\""
          << c << "\">" << name << "</text>\n";
        ++ci;
    }
    s << "</svg>\n";
    return s.str();
}

// ---------------------------------------------------------------------------
// QAT CSVs

inline void write_eval_curve_csv(const std::string& variant, std::uint64_t seed, const qat::EvalCurve& curve,
                                 std::ostream& out, bool header) {
    if (header) out << "variant,seed,format,bits,loss\n";
    for (const auto& r : curve) {
        if (!std::isfinite(r.loss)) throw DataError("non-finite PTQ loss for " + variant + " at " + r.format);
        out << variant << ',' << seed << ',' << r.format << ',' << r.bits << ',' << format_value(r.loss) << '\n';
    }
}

inline void write_train_log_csv(const std::string& variant, std::uint64_t seed, const std::vector<qat::LogRow>& log,
                                std::ostream& out, bool header) {
    if (header) out << "variant,seed,step,format,bits,loss\n";
    for (const auto& r : log)
        out << variant << ',' << seed << ',' << r.step << ',' << r.format << ',' << r.bits << ',' << format_value(r.loss)
            << '\n';
}

}  // namespace mx::sweep
