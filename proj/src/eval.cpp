#include "motionplan/eval.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace motionplan {

std::vector<float> extract_feature(const MotionSequence& normalized_motion,
                                   const TokenizerConfig& config,
                                   ParameterStore& store) {
    LatentSequence latents = encode(normalized_motion, config, store);
    if (latents.length == 0) {
        throw std::runtime_error("extract_feature: motion too short for encoder");
    }
    std::vector<float> feature(latents.code_dim, 0.0f);
    for (int i = 0; i < latents.length; ++i) {
        const float* v = latents.vectors.data() +
                         static_cast<size_t>(i) * latents.code_dim;
        for (int d = 0; d < latents.code_dim; ++d) feature[d] += v[d];
    }
    for (float& f : feature) f /= static_cast<float>(latents.length);
    return feature;
}

double reconstruction_error(const MotionSequence& recon,
                            const MotionSequence& ground_truth) {
    if (recon.d_m != ground_truth.d_m) {
        throw std::runtime_error("reconstruction_error: dimension mismatch");
    }
    int n = std::min(recon.frames(), ground_truth.frames());
    if (n == 0) throw std::runtime_error("reconstruction_error: empty motion");
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        double sq = 0.0;
        for (int d = 0; d < recon.d_m; ++d) {
            double diff = static_cast<double>(recon.at(i, d)) -
                          static_cast<double>(ground_truth.at(i, d));
            sq += diff * diff;
        }
        total += std::sqrt(sq);
    }
    return total / n;
}

namespace {

void moments(const std::vector<std::vector<float>>& set, Eigen::VectorXd& mu,
             Eigen::MatrixXd& cov) {
    int n = static_cast<int>(set.size());
    int d = static_cast<int>(set[0].size());
    mu = Eigen::VectorXd::Zero(d);
    for (const auto& v : set) {
        for (int j = 0; j < d; ++j) mu[j] += v[j];
    }
    mu /= n;
    cov = Eigen::MatrixXd::Zero(d, d);
    for (const auto& v : set) {
        Eigen::VectorXd x(d);
        for (int j = 0; j < d; ++j) x[j] = v[j];
        x -= mu;
        cov.noalias() += x * x.transpose();
    }
    cov /= n;  // population covariance
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
        0.5 * (m + m.transpose()));
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

FrechetResult frechet_distance(const std::vector<std::vector<float>>& set_a,
                               const std::vector<std::vector<float>>& set_b) {
    if (set_a.empty() || set_b.empty()) {
        throw std::runtime_error("frechet_distance: empty feature set");
    }
    int d = static_cast<int>(set_a[0].size());
    if (static_cast<int>(set_b[0].size()) != d) {
        throw std::runtime_error("frechet_distance: feature dimension mismatch");
    }
    for (const auto& v : set_a)
        if (static_cast<int>(v.size()) != d)
            throw std::runtime_error("frechet_distance: ragged feature set");
    for (const auto& v : set_b)
        if (static_cast<int>(v.size()) != d)
            throw std::runtime_error("frechet_distance: ragged feature set");

    Eigen::VectorXd mu_a, mu_b;
    Eigen::MatrixXd cov_a, cov_b;
    moments(set_a, mu_a, cov_a);
    moments(set_b, mu_b, cov_b);

    FrechetResult result;
    // With fewer samples than d+1 the covariance is rank-deficient; fall back
    // to its diagonal so the estimate stays meaningful.
    if (static_cast<int>(set_a.size()) < d + 1 ||
        static_cast<int>(set_b.size()) < d + 1) {
        result.diagonal_fallback = true;
        cov_a = cov_a.diagonal().asDiagonal();
        cov_b = cov_b.diagonal().asDiagonal();
    }

    double mean_term = (mu_a - mu_b).squaredNorm();
    Eigen::MatrixXd sqrt_a = psd_sqrt(cov_a);
    Eigen::MatrixXd inner = sqrt_a * cov_b * sqrt_a;
    double trace_sqrt = psd_sqrt(inner).trace();
    double value = mean_term + cov_a.trace() + cov_b.trace() - 2.0 * trace_sqrt;
    result.value = value > 0.0 ? value : 0.0;
    return result;
}

double diversity_score(const std::vector<std::vector<float>>& features) {
    size_t n = features.size();
    if (n < 2) return 0.0;
    double total = 0.0;
    size_t pairs = 0;
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i + 1; j < n; ++j) {
            if (features[i].size() != features[j].size()) {
                throw std::runtime_error("diversity_score: ragged feature set");
            }
            double sq = 0.0;
            for (size_t d = 0; d < features[i].size(); ++d) {
                double diff = static_cast<double>(features[i][d]) -
                              static_cast<double>(features[j][d]);
                sq += diff * diff;
            }
            total += std::sqrt(sq);
            ++pairs;
        }
    }
    return total / pairs;
}

int segment_order_accuracy(const MotionSequence& motion,
                           const SegmentScript& script,
                           const CorpusParams& params) {
    std::vector<SegmentRun> runs = classify_segments(motion, params);
    if (runs.size() != script.segments.size()) return 0;
    for (size_t i = 0; i < runs.size(); ++i) {
        if (runs[i].type != script.segments[i].type) return 0;
    }
    return 1;
}

double seam_smoothness(const MotionSequence& motion, int clip_length) {
    if (clip_length < 2) {
        throw std::runtime_error("seam_smoothness: clip_length must be >= 2");
    }
    int n = motion.frames();
    double boundary_sum = 0.0, other_sum = 0.0;
    int boundary_count = 0, other_count = 0;
    for (int i = 0; i + 1 < n; ++i) {
        double sq = 0.0;
        for (int d = 0; d < motion.d_m; ++d) {
            double diff = static_cast<double>(motion.at(i + 1, d)) -
                          static_cast<double>(motion.at(i, d));
            sq += diff * diff;
        }
        double norm = std::sqrt(sq);
        if ((i + 1) % clip_length == 0) {
            boundary_sum += norm;
            ++boundary_count;
        } else {
            other_sum += norm;
            ++other_count;
        }
    }
    if (boundary_count == 0) return 1.0;  // single clip, no seams
    double boundary_mean = boundary_sum / boundary_count;
    double other_mean = other_count > 0 ? other_sum / other_count : 0.0;
    if (other_mean <= 0.0) {
        return boundary_mean <= 0.0 ? 1.0
                                    : std::numeric_limits<double>::infinity();
    }
    return boundary_mean / other_mean;
}

std::map<std::string, StageTiming> timing_report(
    const std::map<std::string, std::vector<double>>& stage_times_ms) {
    std::map<std::string, StageTiming> report;
    for (const auto& [stage, times] : stage_times_ms) {
        if (times.empty()) continue;
        std::vector<double> sorted = times;
        std::sort(sorted.begin(), sorted.end());
        StageTiming t;
        t.count = static_cast<int>(sorted.size());
        double sum = 0.0;
        for (double v : sorted) sum += v;
        t.mean_ms = sum / t.count;
        t.median_ms = (t.count % 2 == 1)
                          ? sorted[t.count / 2]
                          : 0.5 * (sorted[t.count / 2 - 1] + sorted[t.count / 2]);
        int p95_idx = static_cast<int>(
            std::ceil(0.95 * t.count)) - 1;
        if (p95_idx < 0) p95_idx = 0;
        t.p95_ms = sorted[p95_idx];
        report[stage] = t;
    }
    return report;
}

void write_metrics_csv(const std::string& path,
                       const std::vector<MetricRow>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_metrics_csv: cannot open " + path);
    out << "metric,value,split,config_hash\n";
    for (const auto& row : rows) {
        std::ostringstream value;
        value.precision(10);
        value << row.value;
        out << row.metric << ',' << value.str() << ',' << row.split << ','
            << row.config_hash << '\n';
    }
    if (!out) throw std::runtime_error("write_metrics_csv: write failed");
}

std::vector<MetricRow> read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_metrics_csv: cannot open " + path);
    std::vector<MetricRow> rows;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (first) {
            first = false;
            if (line.rfind("metric,", 0) == 0) continue;
        }
        std::istringstream ss(line);
        std::string metric, value, split, hash;
        if (!std::getline(ss, metric, ',') || !std::getline(ss, value, ',') ||
            !std::getline(ss, split, ',')) {
            throw std::runtime_error("read_metrics_csv: malformed line: " + line);
        }
        std::getline(ss, hash, ',');
        MetricRow row;
        row.metric = metric;
        row.value = std::stod(value);
        row.split = split;
        row.config_hash = hash;
        rows.push_back(row);
    }
    return rows;
}

void write_svg_plot(const std::string& path, const std::string& title,
                    const std::vector<double>& xs,
                    const std::vector<double>& ys, bool bars) {
    if (xs.size() != ys.size() || xs.empty()) {
        throw std::runtime_error("write_svg_plot: need matching non-empty series");
    }
    const double width = 640, height = 400;
    const double ml = 70, mr = 20, mt = 40, mb = 50;
    double xmin = xs[0], xmax = xs[0], ymin = ys[0], ymax = ys[0];
    for (size_t i = 0; i < xs.size(); ++i) {
        xmin = std::min(xmin, xs[i]);
        xmax = std::max(xmax, xs[i]);
        ymin = std::min(ymin, ys[i]);
        ymax = std::max(ymax, ys[i]);
    }
    if (xmax == xmin) xmax = xmin + 1.0;
    if (ymax == ymin) ymax = ymin + 1.0;
    auto px = [&](double x) {
        return ml + (x - xmin) / (xmax - xmin) * (width - ml - mr);
    };
    auto py = [&](double y) {
        return height - mb - (y - ymin) / (ymax - ymin) * (height - mt - mb);
    };

    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_svg_plot: cannot open " + path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
        << "\" height=\"" << height << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"16\">" << title
        << "</text>\n";
    // axes
    out << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\""
        << width - mr << "\" y2=\"" << height - mb
        << "\" stroke=\"black\"/>\n"
        << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
        << "\" y2=\"" << height - mb << "\" stroke=\"black\"/>\n";
    char buf[64];
    auto label = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.4g", v);
        return std::string(buf);
    };
    out << "<text x=\"" << ml - 6 << "\" y=\"" << py(ymin) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
        << label(ymin) << "</text>\n"
        << "<text x=\"" << ml - 6 << "\" y=\"" << py(ymax) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
        << label(ymax) << "</text>\n"
        << "<text x=\"" << px(xmin) << "\" y=\"" << height - mb + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        << "font-size=\"11\">" << label(xmin) << "</text>\n"
        << "<text x=\"" << px(xmax) << "\" y=\"" << height - mb + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        << "font-size=\"11\">" << label(xmax) << "</text>\n";
    if (bars) {
        double bw = (width - ml - mr) / (2.0 * xs.size());
        for (size_t i = 0; i < xs.size(); ++i) {
            double x = px(xs[i]) - bw / 2;
            double y = py(ys[i]);
            out << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << bw
                << "\" height=\"" << (height - mb - y)
                << "\" fill=\"steelblue\"/>\n";
        }
    } else {
        out << "<polyline fill=\"none\" stroke=\"steelblue\" "
            << "stroke-width=\"2\" points=\"";
        for (size_t i = 0; i < xs.size(); ++i) {
            out << px(xs[i]) << ',' << py(ys[i]);
            if (i + 1 < xs.size()) out << ' ';
        }
        out << "\"/>\n";
        for (size_t i = 0; i < xs.size(); ++i) {
            out << "<circle cx=\"" << px(xs[i]) << "\" cy=\"" << py(ys[i])
                << "\" r=\"3\" fill=\"steelblue\"/>\n";
        }
    }
    out << "</svg>\n";
    if (!out) throw std::runtime_error("write_svg_plot: write failed");
}

}  // namespace motionplan
