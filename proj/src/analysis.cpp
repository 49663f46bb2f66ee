#include "vtck/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "vtck/errors.hpp"

namespace vtck {

double change_ratio(const Tensor<float>& before, const Tensor<float>& after) {
    if (before.shape() != after.shape()) {
        throw IncompatError("change_ratio: shape mismatch " + shape_str(before.shape()) + " vs " +
                            shape_str(after.shape()));
    }
    double norm2 = 0.0, diff2 = 0.0;
    for (int64_t i = 0; i < before.numel(); ++i) {
        const double b = before[i];
        const double d = static_cast<double>(after[i]) - b;
        norm2 += b * b;
        diff2 += d * d;
    }
    if (norm2 == 0.0) throw RangeError("change_ratio: zero-norm base tensor, ratio undefined");
    return std::sqrt(diff2) / std::sqrt(norm2);
}

ChangeReport analyze(const ModelParams<float>& base, const ModelParams<float>& finetuned) {
    if (base.entries().size() != finetuned.entries().size()) {
        throw IncompatError("analyze: checkpoints have different parameter counts");
    }
    ChangeReport report;
    double attn_sum = 0.0, other_sum = 0.0;
    int64_t attn_n = 0, other_n = 0;
    for (const auto& e : base.entries()) {
        if (!finetuned.has(e.name)) {
            throw IncompatError("analyze: tensor '" + e.name + "' missing from the fine-tuned checkpoint");
        }
        const Tensor<float>& after = finetuned.at(e.name);
        if (after.shape() != e.tensor.shape()) {
            throw IncompatError("analyze: tensor '" + e.name + "' has shape " + shape_str(after.shape()) +
                                " vs " + shape_str(e.tensor.shape()));
        }
        double ratio;
        try {
            ratio = change_ratio(e.tensor, after);
        } catch (const RangeError&) {
            report.warnings.push_back("tensor '" + e.name + "' has zero norm; excluded from group means");
            continue;
        }
        if (e.name == "e_phi") {
            report.e_phi_ratio = ratio;
            continue;
        }
        const bool counted = e.tensor.ndim() == 2;
        report.ranked.push_back({e.name, e.module_class, ratio, counted});
        if (!counted) continue;
        if (e.module_class == ModuleClass::kAttention) {
            attn_sum += ratio;
            ++attn_n;
        } else {
            other_sum += ratio;
            ++other_n;
        }
    }
    std::sort(report.ranked.begin(), report.ranked.end(), [](const TensorChange& a, const TensorChange& b) {
        if (a.ratio != b.ratio) return a.ratio > b.ratio;
        return a.name < b.name;
    });
    report.attention_mean = attn_n ? attn_sum / static_cast<double>(attn_n) : 0.0;
    report.other_mean = other_n ? other_sum / static_cast<double>(other_n) : 0.0;
    return report;
}

namespace {

const char* group_name(const TensorChange& tc) {
    if (tc.module_class == ModuleClass::kAttention) return "attention";
    return tc.in_group_mean ? "other" : "other*";  // * = outside the group means
}

}  // namespace

std::string format_report_table(const ChangeReport& report) {
    std::ostringstream out;
    char line[160];
    out << "weight change ratios (||after - before|| / ||before||)\n";
    std::snprintf(line, sizeof(line), "%-28s %-10s %12s\n", "tensor", "group", "ratio");
    out << line;
    for (const auto& tc : report.ranked) {
        std::snprintf(line, sizeof(line), "%-28s %-10s %12.6f\n", tc.name.c_str(), group_name(tc),
                      tc.ratio);
        out << line;
    }
    std::snprintf(line, sizeof(line), "%-28s %-10s %12.6f\n", "mean(weights)", "attention",
                  report.attention_mean);
    out << line;
    std::snprintf(line, sizeof(line), "%-28s %-10s %12.6f\n", "mean(weights)", "other", report.other_mean);
    out << line;
    out << "(* bias/gain vectors are listed but not averaged)\n";
    if (report.e_phi_ratio) {
        std::snprintf(line, sizeof(line), "%-28s %-10s %12.6f\n", "e_phi", "(separate)", *report.e_phi_ratio);
        out << line;
    }
    for (const auto& w : report.warnings) out << "warning: " << w << "\n";
    return out.str();
}

std::string format_report_records(const ChangeReport& report) {
    std::ostringstream out;
    char line[192];
    for (const auto& tc : report.ranked) {
        std::snprintf(line, sizeof(line), "tensor=%s group=%s counted=%d ratio=%.9g\n", tc.name.c_str(),
                      tc.module_class == ModuleClass::kAttention ? "attention" : "other",
                      tc.in_group_mean ? 1 : 0, tc.ratio);
        out << line;
    }
    std::snprintf(line, sizeof(line), "group_mean=attention ratio=%.9g\n", report.attention_mean);
    out << line;
    std::snprintf(line, sizeof(line), "group_mean=other ratio=%.9g\n", report.other_mean);
    out << line;
    if (report.e_phi_ratio) {
        std::snprintf(line, sizeof(line), "tensor=e_phi group=separate ratio=%.9g\n", *report.e_phi_ratio);
        out << line;
    }
    return out.str();
}

}  // namespace vtck
