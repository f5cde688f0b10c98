#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace nsn {

// Rows are the actual class, columns the predicted class.
struct ConfusionMatrix {
    std::size_t classes = 0;
    std::vector<std::size_t> counts;  // classes x classes, row-major
    std::size_t total = 0;

    std::size_t& at(std::size_t actual, std::size_t predicted) {
        return counts[actual * classes + predicted];
    }
    std::size_t at(std::size_t actual, std::size_t predicted) const {
        return counts[actual * classes + predicted];
    }
    std::size_t row_sum(std::size_t actual) const;   // support (TP + FN)
    std::size_t col_sum(std::size_t predicted) const;  // TP + FP
};

struct PerClass {
    std::optional<double> recall;     // absent when the class has no support
    std::optional<double> precision;  // absent when nothing was predicted as it
    double f1 = 0.0;                  // 0 when precision+recall degenerate
};

struct EvalReport {
    double accuracy = 0.0;
    double balanced_accuracy = 0.0;
    double macro_f1 = 0.0;
    std::optional<double> kappa;  // absent when expected agreement is 1
    std::vector<PerClass> per_class;
    ConfusionMatrix confusion;
    std::vector<std::string> warnings;
};

ConfusionMatrix confusion_matrix(const std::vector<std::size_t>& truth,
                                 const std::vector<std::size_t>& pred, std::size_t classes);

double accuracy(const ConfusionMatrix& cm);
double balanced_accuracy(const ConfusionMatrix& cm,
                         std::vector<std::size_t>* skipped_classes = nullptr);
double macro_f1(const ConfusionMatrix& cm);
std::optional<double> cohens_kappa(const ConfusionMatrix& cm);

EvalReport evaluate_predictions(const std::vector<std::size_t>& truth,
                                const std::vector<std::size_t>& pred, std::size_t classes);

// Stable JSON schema: accuracy, balanced_accuracy, macro_f1, kappa,
// per_class, confusion.
std::string report_to_json(const EvalReport& report);

// Aligned plain-text table with a row-normalized (per-class recall) view.
std::string report_to_table(const EvalReport& report,
                            const std::vector<std::string>& class_names);

}  // namespace nsn
