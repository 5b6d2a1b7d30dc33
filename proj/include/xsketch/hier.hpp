#pragma once

#include "xsketch/common.hpp"

// Chordwise pooling (N2C) and notewise broadcasting (C2N). Implemented as
// segment mean / segment broadcast over the chord partition, O(N*D); the
// dense-matrix formulation (M*e row-normalized, M^T*e) is only materialized
// in tests, which assert equivalence.
namespace xsketch::hier {

// rows of e grouped by chord sizes -> per-chord mean rows
inline Mat segment_mean(const Mat& e, const std::vector<int>& sizes) {
    Eigen::Index total = 0;
    for (int s : sizes) total += s;
    if (total != e.rows()) throw std::invalid_argument("segment_mean: rows do not match partition");
    Mat out(static_cast<Eigen::Index>(sizes.size()), e.cols());
    Eigen::Index r = 0;
    for (size_t c = 0; c < sizes.size(); ++c) {
        out.row(static_cast<Eigen::Index>(c)) = e.middleRows(r, sizes[c]).colwise().mean();
        r += sizes[c];
    }
    return out;
}

// per-chord rows -> every note of the chord receives its chord's row
inline Mat segment_broadcast(const Mat& e, const std::vector<int>& sizes) {
    if (static_cast<size_t>(e.rows()) != sizes.size())
        throw std::invalid_argument("segment_broadcast: rows do not match partition");
    Eigen::Index total = 0;
    for (int s : sizes) total += s;
    Mat out(total, e.cols());
    Eigen::Index r = 0;
    for (size_t c = 0; c < sizes.size(); ++c) {
        out.middleRows(r, sizes[c]).rowwise() = e.row(static_cast<Eigen::Index>(c));
        r += sizes[c];
    }
    return out;
}

inline Mat n2c(const Mat& e, const ChordPartition& p) { return segment_mean(e, p.sizes()); }
inline Mat n2c(const Mat& e, const AlignmentMatrix& m) { return n2c(e, m.partition); }

inline Mat c2n(const Mat& e, const ChordPartition& p) { return segment_broadcast(e, p.sizes()); }
inline Mat c2n(const Mat& e, const AlignmentMatrix& m) { return c2n(e, m.partition); }

}  // namespace xsketch::hier
