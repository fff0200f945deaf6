#pragma once

#include "so3picard/score.hpp"
#include "so3picard/text_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <iterator>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace so3picard {

inline constexpr const char* kScoreTableHeader = "so3-score-table v1";

struct ScoreTableEntry {
    Eigen::Vector4d quat;  // (w, x, y, z) as written in the file
    double sigma = 0.0;
    Tangent score = Tangent::Zero();
};

/// Score model backed by a (rotation x noise level) table.
///
/// A query is answered from the table's nearest noise level and, within that
/// level, the geodesically nearest rotation. No interpolation.
class TabulatedScore final : public ScoreModel {
public:
    explicit TabulatedScore(std::vector<ScoreTableEntry> entries) : entries_(std::move(entries)) {
        if (entries_.empty()) throw std::invalid_argument("score table has no entries");
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            const auto& e = entries_[i];
            levels_[e.sigma].push_back(i);
            rotations_.push_back(Rotation::from_quaternion(e.quat[0], e.quat[1], e.quat[2], e.quat[3]));
        }
    }

    const std::vector<ScoreTableEntry>& entries() const { return entries_; }
    double sigma_lo() const { return levels_.begin()->first; }
    double sigma_hi() const { return levels_.rbegin()->first; }

protected:
    Tangent compute(const Rotation& x, double sigma) const override {
        const double slack = 1e-12 * std::max(1.0, sigma_hi());
        if (!(sigma >= sigma_lo() - slack && sigma <= sigma_hi() + slack))
            throw std::out_of_range("noise level " + textio::format_double(sigma) + " outside table range [" +
                                    textio::format_double(sigma_lo()) + ", " + textio::format_double(sigma_hi()) +
                                    "]");
        auto hi = levels_.lower_bound(sigma);
        auto best = hi;
        if (hi == levels_.end()) {
            best = std::prev(hi);
        } else if (hi != levels_.begin()) {
            auto lo = std::prev(hi);
            if (sigma - lo->first < hi->first - sigma) best = lo;
        }
        const auto& idx = best->second;
        std::size_t pick = idx.front();
        double best_d = geodesic_distance(x, rotations_[pick]);
        for (std::size_t k = 1; k < idx.size(); ++k) {
            const double d = geodesic_distance(x, rotations_[idx[k]]);
            if (d < best_d) {
                best_d = d;
                pick = idx[k];
            }
        }
        return entries_[pick].score;
    }

private:
    std::vector<ScoreTableEntry> entries_;
    std::vector<Rotation> rotations_;
    std::map<double, std::vector<std::size_t>> levels_;
};

/// Evaluates `model` on every (rotation, sigma) pair.
inline std::vector<ScoreTableEntry> tabulate_score(const ScoreModel& model, const std::vector<Rotation>& grid,
                                                   const std::vector<double>& sigmas) {
    std::vector<ScoreTableEntry> out;
    out.reserve(grid.size() * sigmas.size());
    for (double s : sigmas) {
        for (const auto& r : grid) out.push_back({r.quaternion(), s, model.evaluate(r, s)});
    }
    return out;
}

inline void write_score_table(std::ostream& os, const std::vector<ScoreTableEntry>& entries) {
    using textio::format_double;
    os << kScoreTableHeader << '\n';
    os << "# qw qx qy qz sigma s1 s2 s3\n";
    for (const auto& e : entries) {
        os << format_double(e.quat[0]) << ' ' << format_double(e.quat[1]) << ' ' << format_double(e.quat[2])
           << ' ' << format_double(e.quat[3]) << ' ' << format_double(e.sigma) << ' '
           << format_double(e.score[0]) << ' ' << format_double(e.score[1]) << ' '
           << format_double(e.score[2]) << '\n';
    }
}

inline std::vector<ScoreTableEntry> read_score_table(std::istream& is) {
    std::vector<ScoreTableEntry> out;
    std::string line;
    std::size_t line_no = 0;
    bool header = false;
    while (std::getline(is, line)) {
        ++line_no;
        const auto body = textio::strip(line);
        if (body.empty()) continue;
        if (!header) {
            if (body != kScoreTableHeader)
                throw ParseError(line_no, std::string("expected header '") + kScoreTableHeader + "'");
            header = true;
            continue;
        }
        const auto f = textio::parse_fields<8>(body, line_no);
        ScoreTableEntry e{Eigen::Vector4d(f[0], f[1], f[2], f[3]), f[4], Tangent(f[5], f[6], f[7])};
        const double qn = e.quat.norm();
        if (!std::isfinite(qn) || std::abs(qn - 1.0) > 1e-6)
            throw ParseError(line_no, "quaternion is not unit length");
        if (!(e.sigma > 0.0) || !std::isfinite(e.sigma)) throw ParseError(line_no, "sigma must be finite and > 0");
        if (!e.score.allFinite()) throw ParseError(line_no, "score must be finite");
        out.push_back(e);
    }
    if (!header) throw ParseError(line_no, "missing header (empty file?)");
    if (out.empty()) throw ParseError(line_no, "table has no entries");
    return out;
}

inline void save_score_table(const std::string& path, const std::vector<ScoreTableEntry>& entries) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    write_score_table(os, entries);
    if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

inline std::shared_ptr<TabulatedScore> load_tabulated_score(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open '" + path + "'");
    return std::make_shared<TabulatedScore>(read_score_table(is));
}

}  // namespace so3picard
