#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace xsketch {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Expressive attribute order used everywhere: x columns, z_pln blocks,
// signal columns. 0 = dynamics (MIDIVelocity), 1 = tempo (IOIRatio),
// 2 = articulation.
enum Attr : int { kDynamics = 0, kTempo = 1, kArticulation = 2 };
inline constexpr int kNumAttrs = 3;
inline constexpr const char* kAttrNames[kNumAttrs] = {"vel", "tempo", "art"};

// Partition of serialized notes into chords (groups of equal score onset).
// Groups are contiguous index ranges in onset order.
struct ChordPartition {
    std::vector<std::vector<int>> groups;

    int chord_count() const { return static_cast<int>(groups.size()); }
    int note_count() const {
        int n = 0;
        for (const auto& g : groups) n += static_cast<int>(g.size());
        return n;
    }
    std::vector<int> sizes() const {
        std::vector<int> s(groups.size());
        for (size_t i = 0; i < groups.size(); ++i) s[i] = static_cast<int>(groups[i].size());
        return s;
    }
    // chord index of each note
    std::vector<int> note_to_chord() const {
        std::vector<int> m(note_count());
        for (size_t c = 0; c < groups.size(); ++c)
            for (int n : groups[c]) m[n] = static_cast<int>(c);
        return m;
    }
    static ChordPartition from_sizes(const std::vector<int>& sizes) {
        ChordPartition p;
        int n = 0;
        for (int s : sizes) {
            std::vector<int> g(s);
            std::iota(g.begin(), g.end(), n);
            n += s;
            p.groups.push_back(std::move(g));
        }
        return p;
    }
    static ChordPartition singletons(int n) { return from_sizes(std::vector<int>(n, 1)); }

    void validate() const {
        if (groups.empty()) throw std::invalid_argument("empty partition");
        int expect = 0;
        for (const auto& g : groups) {
            if (g.empty()) throw std::invalid_argument("empty chord group");
            for (int n : g) {
                if (n != expect++) throw std::invalid_argument("partition is not a contiguous cover of [0,N)");
            }
        }
    }
};

// Binary C x N matrix aligning serialized notes to chords. Stored as the
// partition it encodes; dense() materializes it for equivalence tests.
struct AlignmentMatrix {
    ChordPartition partition;

    int rows() const { return partition.chord_count(); }
    int cols() const { return partition.note_count(); }
    Mat dense() const {
        Mat m = Mat::Zero(rows(), cols());
        for (int c = 0; c < rows(); ++c)
            for (int n : partition.groups[c]) m(c, n) = 1.0;
        return m;
    }
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace xsketch
