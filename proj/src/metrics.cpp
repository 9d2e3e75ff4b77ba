#include "deepfidelity/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "deepfidelity/errors.hpp"

namespace deepfidelity {

double auc(const std::vector<double>& scores, const std::vector<Label>& labels) {
    if (scores.size() != labels.size())
        throw DimensionError("auc: scores/labels length mismatch");
    size_t n_real = 0, n_fake = 0;
    for (Label l : labels) (l == Label::Real ? n_real : n_fake) += 1;
    if (n_real == 0 || n_fake == 0)
        throw DomainError("auc: both classes must be present");
    for (double s : scores)
        if (std::isnan(s)) throw DomainError("auc: NaN score");

    // average ranks with tie groups; rank sum of the real class
    std::vector<size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    double real_rank_sum = 0;
    size_t i = 0;
    while (i < idx.size()) {
        size_t j = i;
        while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (size_t k = i; k <= j; ++k)
            if (labels[idx[k]] == Label::Real) real_rank_sum += avg_rank;
        i = j + 1;
    }
    const double nr = static_cast<double>(n_real), nf = static_cast<double>(n_fake);
    return (real_rank_sum - nr * (nr + 1.0) / 2.0) / (nr * nf);
}

double EvalReport::bucket_accuracy(int cls, int bucket) const {
    const size_t c = bucket_count[cls][bucket];
    if (c == 0) return std::nan("");
    return static_cast<double>(bucket_correct[cls][bucket]) / static_cast<double>(c);
}

namespace {

std::string pct(double v) {
    if (std::isnan(v)) return "-";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v * 100.0);
    return buf;
}

const char* kBucketRanges[4] = {"0.00 - 0.25", "0.25 - 0.50", "0.50 - 0.75", "0.75 - 1.00"};

} // namespace

std::string EvalReport::to_table() const {
    std::ostringstream os;
    char line[128];
    std::snprintf(line, sizeof(line), "Accuracy: %.4f   AUC: %.4f   N: %zu\n", accuracy, auc, n);
    os << line;
    os << "Class  Quality Range  Count  Acc (%)\n";
    for (int cls = 0; cls < 2; ++cls) {
        const char* name = cls == 0 ? "Fake" : "Real";
        for (int b = 0; b < 4; ++b) {
            std::snprintf(line, sizeof(line), "%-5s  %s    %5zu  %s\n", name, kBucketRanges[b],
                          bucket_count[cls][b], pct(bucket_accuracy(cls, b)).c_str());
            os << line;
        }
    }
    return os.str();
}

std::string EvalReport::to_kv() const {
    std::ostringstream os;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", accuracy);
    os << "accuracy: " << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.17g", auc);
    os << "auc: " << buf << "\n";
    os << "n: " << n << "\n";
    os << "n_correct: " << n_correct << "\n";
    for (int cls = 0; cls < 2; ++cls) {
        const char* name = cls == 0 ? "fake" : "real";
        for (int b = 0; b < 4; ++b) {
            os << "count_" << name << "_b" << b << ": " << bucket_count[cls][b] << "\n";
            const double a = bucket_accuracy(cls, b);
            os << "acc_" << name << "_b" << b << ": ";
            if (std::isnan(a)) {
                os << "-";
            } else {
                std::snprintf(buf, sizeof(buf), "%.17g", a);
                os << buf;
            }
            os << "\n";
        }
    }
    return os.str();
}

} // namespace deepfidelity
