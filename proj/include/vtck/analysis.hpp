#pragma once

// Weight-change-ratio analysis between a base checkpoint and a fine-tuned
// one: per-tensor ||after - before||_F / ||before||_F, grouped into
// attention vs other (unweighted per-tensor means over the weight matrices).
// Bias and gain vectors are listed but kept out of the means: they start at
// zero, so their tiny post-pretraining norms turn any fine-tuning nudge into
// a ratio that swamps the group average. The unconditional embedding is an
// input to the decoder rather than a decoder weight, so it too is excluded
// and reported on its own line.

#include <optional>
#include <string>
#include <vector>

#include "vtck/model.hpp"
#include "vtck/tensor.hpp"

namespace vtck {

double change_ratio(const Tensor<float>& before, const Tensor<float>& after);

struct TensorChange {
    std::string name;
    ModuleClass module_class;
    double ratio;
    bool in_group_mean;  // weight matrices only
};

struct ChangeReport {
    std::vector<TensorChange> ranked;  // descending ratio, ties by name
    double attention_mean = 0.0;       // over attention weight matrices
    double other_mean = 0.0;           // over the remaining weight matrices
    std::optional<double> e_phi_ratio;
    std::vector<std::string> warnings;  // zero-norm tensors, excluded entirely
};

ChangeReport analyze(const ModelParams<float>& base, const ModelParams<float>& finetuned);

std::string format_report_table(const ChangeReport& report);
std::string format_report_records(const ChangeReport& report);

}  // namespace vtck
