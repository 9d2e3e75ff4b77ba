#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "deepfidelity/fidelity.hpp"

namespace deepfidelity {

// Probability that a random real-labeled score exceeds a random fake-labeled
// score, ties counted 0.5 (Mann-Whitney rank form; exact, no trapezoids).
double auc(const std::vector<double>& scores, const std::vector<Label>& labels);

struct EvalReport {
    double accuracy = 0.0;
    double auc = 0.0;
    size_t n = 0;
    size_t n_correct = 0;
    // [class][bucket]: class 0 = fake, 1 = real; 4 quality-quartile buckets
    std::array<std::array<size_t, 4>, 2> bucket_count{};
    std::array<std::array<size_t, 4>, 2> bucket_correct{};

    double bucket_accuracy(int cls, int bucket) const;
    std::string to_table() const;  // human-readable, Table-5-style layout
    std::string to_kv() const;     // plain-text key: value lines
};

} // namespace deepfidelity
