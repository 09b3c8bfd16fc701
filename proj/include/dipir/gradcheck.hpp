#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace dipir {

struct GradCheckReport {
    double max_rel_error = 0.0;
    double mean_rel_error = 0.0;
    std::vector<std::size_t> failing;  // coordinates above tolerance
    std::vector<double> analytic;
    std::vector<double> numeric;

    bool passed() const { return failing.empty(); }
    std::string summary(const std::string &name) const;
};

/// Compares an analytic gradient against central differences of a
/// deterministic scalar function. The relative error of coordinate k is
/// |a - n| / max(|a|, |n|, abs_floor).
GradCheckReport finite_diff_check(const std::function<double(std::span<const double>)> &loss,
                                  std::span<const double> params, std::span<const double> analytic, double h,
                                  double tolerance, double abs_floor = 1e-10);

struct GradCheckEntry {
    std::string name;
    double tolerance = 0.0;
    GradCheckReport report;
};

struct GradCheckSuite {
    std::vector<GradCheckEntry> entries;

    bool passed() const;
    /// One line per entry.
    std::string text() const;
};

/// Lightfield and tone-mapping VJPs against central differences (tolerance 1e-4).
GradCheckSuite gradcheck_components(std::uint64_t seed);

struct FullChainOptions {
    int rows = 8;
    int cols = 8;
    int spp = 16;
    int num_lobes = 4;
    int env_height = 16;
    int env_width = 32;
    double fusion = 0.5;
    double h = 1e-4;
    double tolerance = 1e-3;
    double abs_floor = 1e-7;
};

/// bake -> blend -> render -> tone -> composite -> crop/resize -> L1 against a
/// reference offset by at least 0.1 everywhere, with sampling decisions frozen.
/// Covers lighting, tone, material and emission segments.
GradCheckEntry gradcheck_full_chain(std::uint64_t seed, const FullChainOptions &options = {});

/// Components plus the full chain.
GradCheckSuite run_gradcheck(std::uint64_t seed);

}  // namespace dipir
