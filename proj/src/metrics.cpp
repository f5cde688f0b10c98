#include "neurosleep/metrics.hpp"

#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace nsn {

std::size_t ConfusionMatrix::row_sum(std::size_t actual) const {
    std::size_t s = 0;
    for (std::size_t p = 0; p < classes; ++p) s += at(actual, p);
    return s;
}

std::size_t ConfusionMatrix::col_sum(std::size_t predicted) const {
    std::size_t s = 0;
    for (std::size_t a = 0; a < classes; ++a) s += at(a, predicted);
    return s;
}

ConfusionMatrix confusion_matrix(const std::vector<std::size_t>& truth,
                                 const std::vector<std::size_t>& pred, std::size_t classes) {
    if (truth.size() != pred.size())
        throw std::invalid_argument("confusion_matrix: length mismatch (" +
                                    std::to_string(truth.size()) + " vs " +
                                    std::to_string(pred.size()) + ")");
    ConfusionMatrix cm;
    cm.classes = classes;
    cm.counts.assign(classes * classes, 0);
    cm.total = truth.size();
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] >= classes || pred[i] >= classes)
            throw std::invalid_argument("confusion_matrix: label out of range at index " +
                                        std::to_string(i));
        ++cm.at(truth[i], pred[i]);
    }
    return cm;
}

double accuracy(const ConfusionMatrix& cm) {
    if (cm.total == 0) throw std::invalid_argument("accuracy: empty confusion matrix");
    std::size_t tp = 0;
    for (std::size_t i = 0; i < cm.classes; ++i) tp += cm.at(i, i);
    return double(tp) / double(cm.total);
}

double balanced_accuracy(const ConfusionMatrix& cm, std::vector<std::size_t>* skipped_classes) {
    double sum = 0.0;
    std::size_t supported = 0;
    for (std::size_t i = 0; i < cm.classes; ++i) {
        const std::size_t support = cm.row_sum(i);
        if (support == 0) {
            if (skipped_classes) skipped_classes->push_back(i);
            continue;
        }
        sum += double(cm.at(i, i)) / double(support);
        ++supported;
    }
    if (supported == 0) throw std::invalid_argument("balanced_accuracy: no class has support");
    return sum / double(supported);
}

double macro_f1(const ConfusionMatrix& cm) {
    double sum = 0.0;
    for (std::size_t i = 0; i < cm.classes; ++i) {
        const std::size_t tp = cm.at(i, i);
        const std::size_t support = cm.row_sum(i);
        const std::size_t predicted = cm.col_sum(i);
        // A class with P+R == 0 contributes F1 = 0.
        if (tp == 0) continue;
        const double recall = double(tp) / double(support);
        const double precision = double(tp) / double(predicted);
        sum += 2.0 * precision * recall / (precision + recall);
    }
    return sum / double(cm.classes);
}

std::optional<double> cohens_kappa(const ConfusionMatrix& cm) {
    if (cm.total == 0) throw std::invalid_argument("cohens_kappa: empty confusion matrix");
    std::size_t tp = 0;
    double pe_num = 0.0;
    for (std::size_t i = 0; i < cm.classes; ++i) {
        tp += cm.at(i, i);
        pe_num += double(cm.col_sum(i)) * double(cm.row_sum(i));
    }
    const double po = double(tp) / double(cm.total);
    const double pe = pe_num / (double(cm.total) * double(cm.total));
    if (pe == 1.0) return std::nullopt;  // degenerate single-class agreement
    return (po - pe) / (1.0 - pe);
}

EvalReport evaluate_predictions(const std::vector<std::size_t>& truth,
                                const std::vector<std::size_t>& pred, std::size_t classes) {
    EvalReport r;
    r.confusion = confusion_matrix(truth, pred, classes);
    r.accuracy = accuracy(r.confusion);
    std::vector<std::size_t> skipped;
    r.balanced_accuracy = balanced_accuracy(r.confusion, &skipped);
    for (std::size_t c : skipped)
        r.warnings.push_back("class " + std::to_string(c) +
                             " has no support and is excluded from balanced accuracy");
    r.macro_f1 = macro_f1(r.confusion);
    r.kappa = cohens_kappa(r.confusion);
    if (!r.kappa)
        r.warnings.push_back("kappa undefined: expected agreement is 1");
    r.per_class.resize(classes);
    for (std::size_t i = 0; i < classes; ++i) {
        const std::size_t tp = r.confusion.at(i, i);
        const std::size_t support = r.confusion.row_sum(i);
        const std::size_t predicted = r.confusion.col_sum(i);
        auto& pc = r.per_class[i];
        if (support > 0) pc.recall = double(tp) / double(support);
        if (predicted > 0) pc.precision = double(tp) / double(predicted);
        if (pc.recall && pc.precision && (*pc.recall + *pc.precision) > 0.0)
            pc.f1 = 2.0 * *pc.precision * *pc.recall / (*pc.precision + *pc.recall);
    }
    return r;
}

std::string report_to_json(const EvalReport& r) {
    nlohmann::json j;
    j["accuracy"] = r.accuracy;
    j["balanced_accuracy"] = r.balanced_accuracy;
    j["macro_f1"] = r.macro_f1;
    if (r.kappa)
        j["kappa"] = *r.kappa;
    else
        j["kappa"] = nullptr;
    j["per_class"] = nlohmann::json::array();
    for (const auto& pc : r.per_class) {
        nlohmann::json e;
        e["recall"] = pc.recall ? nlohmann::json(*pc.recall) : nlohmann::json(nullptr);
        e["precision"] = pc.precision ? nlohmann::json(*pc.precision) : nlohmann::json(nullptr);
        e["f1"] = pc.f1;
        j["per_class"].push_back(e);
    }
    j["confusion"] = nlohmann::json::array();
    for (std::size_t a = 0; a < r.confusion.classes; ++a) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t p = 0; p < r.confusion.classes; ++p)
            row.push_back(r.confusion.at(a, p));
        j["confusion"].push_back(row);
    }
    if (!r.warnings.empty()) j["warnings"] = r.warnings;
    return j.dump(2);
}

std::string report_to_table(const EvalReport& r, const std::vector<std::string>& class_names) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "accuracy           " << r.accuracy << "\n";
    os << "balanced accuracy  " << r.balanced_accuracy << "\n";
    os << "macro F1           " << r.macro_f1 << "\n";
    os << "kappa              ";
    if (r.kappa)
        os << *r.kappa << "\n";
    else
        os << "undefined\n";
    os << "\nrow-normalized confusion (rows: actual, cols: predicted)\n";
    os << std::setw(6) << "AC\\PC";
    for (std::size_t p = 0; p < r.confusion.classes; ++p)
        os << std::setw(9) << (p < class_names.size() ? class_names[p] : std::to_string(p));
    os << std::setw(10) << "support\n";
    for (std::size_t a = 0; a < r.confusion.classes; ++a) {
        os << std::setw(6) << (a < class_names.size() ? class_names[a] : std::to_string(a));
        const std::size_t support = r.confusion.row_sum(a);
        for (std::size_t p = 0; p < r.confusion.classes; ++p) {
            if (support == 0)
                os << std::setw(9) << "--";
            else
                os << std::setw(9) << double(r.confusion.at(a, p)) / double(support);
        }
        os << std::setw(9) << support << "\n";
    }
    return os.str();
}

}  // namespace nsn
