#include "dipir/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dipir/errors.hpp"

namespace dipir {

GradCheckReport finite_diff_check(const std::function<double(std::span<const double>)> &loss,
                                  std::span<const double> params, std::span<const double> analytic, double h,
                                  double tolerance, double abs_floor) {
    if (params.size() != analytic.size()) throw InvalidArgument("finite_diff_check: gradient size mismatch");
    if (!(h > 0.0)) throw InvalidArgument("finite_diff_check: step must be positive");
    GradCheckReport report;
    report.analytic.assign(analytic.begin(), analytic.end());
    std::vector<double> x(params.begin(), params.end());
    double sum = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double x0 = x[k];
        x[k] = x0 + h;
        const double fp = loss(x);
        x[k] = x0 - h;
        const double fm = loss(x);
        x[k] = x0;
        const double numeric = (fp - fm) / (2.0 * h);
        report.numeric.push_back(numeric);
        const double scale = std::max({std::abs(analytic[k]), std::abs(numeric), abs_floor});
        const double rel = std::abs(analytic[k] - numeric) / scale;
        if (!(rel <= tolerance)) report.failing.push_back(k);
        report.max_rel_error = std::max(report.max_rel_error, std::isfinite(rel) ? rel : INFINITY);
        sum += rel;
    }
    report.mean_rel_error = x.empty() ? 0.0 : sum / static_cast<double>(x.size());
    return report;
}

std::string GradCheckReport::summary(const std::string &name) const {
    std::ostringstream os;
    os << name << ": " << (passed() ? "PASS" : "FAIL") << " coords=" << analytic.size()
       << " max_rel=" << max_rel_error << " mean_rel=" << mean_rel_error;
    if (!failing.empty()) {
        os << " failing=[";
        for (std::size_t i = 0; i < failing.size() && i < 8; ++i) os << (i ? "," : "") << failing[i];
        if (failing.size() > 8) os << ",...";
        os << "]";
    }
    return os.str();
}

}  // namespace dipir
