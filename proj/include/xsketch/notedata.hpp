#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xsketch/common.hpp"
#include "xsketch/hier.hpp"

// Aligned score/performance ingestion, chord grouping, feature extraction
// and its inverse. Score timing lives on a 16th-note grid (integer 16ths);
// performance timing is in seconds. Reference scale: velocity 64, BPM 120.
namespace xsketch::notedata {

constexpr double kBpmReference = 120.0;
constexpr double kSecondsPerBeat = 60.0 / kBpmReference;     // 0.5 s per quarter
constexpr double kSecondsPer16th = kSecondsPerBeat / 4.0;
constexpr double kVelocityReference = 64.0;
constexpr double kVelocityLow = 24.0, kVelocityHigh = 104.0;
constexpr double kIoiClipLow = 0.125, kIoiClipHigh = 8.0;    // 2^-3 .. 2^3
constexpr double kArtClipLow = 0.25, kArtClipHigh = 4.0;     // 2^-2 .. 2^2
constexpr double kVelocityScale = 40.0;  // (v - 64)/40 maps [24,104] -> [-1,1]
constexpr double kIoiLogScale = 3.0;     // log2 of [1/8, 8] / 3 -> [-1,1]
constexpr double kArtLogScale = 2.0;     // log2 of [1/4, 4] / 2 -> [-1,1]

enum class Staff : int { G = 0, F = 1 };

struct ScoreNote {
    int onset_16ths = 0;
    int dur_16ths = 1;
    int pitch = 60;
    Staff staff = Staff::G;
    int meter_beats = 4;          // beats per measure
    int measure_pos_16ths = 0;    // offset from measure start

    double onset_beats() const { return onset_16ths / 4.0; }
    double dur_beats() const { return dur_16ths / 4.0; }
    double onset_seconds() const { return onset_16ths * kSecondsPer16th; }
    double dur_seconds() const { return dur_16ths * kSecondsPer16th; }
};

struct PerfNote {
    double onset_s = 0.0;
    double dur_s = 0.0;
    double velocity = kVelocityReference;  // real-valued; quantized at emission
    int score_index = -1;
};

struct AlignedPiece {
    std::string piece_id;
    std::vector<ScoreNote> score;
    std::vector<PerfNote> perf;

    int note_count() const { return static_cast<int>(score.size()); }
};

struct PerformanceFeatures {
    Mat x;      // N x 3 normalized: (MIDIVelocity, IOIRatio, Articulation)
    Mat raw_x;  // N x 3 pre-normalization: (clipped velocity, log2 ratios)
    std::vector<std::string> warnings;
};

struct ScoreFeatures {
    // class values, per spec ranges: Pitch 21..108, RelDuration/RelIOI 1..11,
    // IsTopVoice 0/1, PositionInChord/NumInChord 1..11, Staff 0/1, IsDownbeat 0/1
    Eigen::MatrixXi y;  // N x 8
};

inline constexpr int kScoreFeatureCount = 8;
inline constexpr const char* kScoreFeatureNames[kScoreFeatureCount] = {
    "pitch", "rel_duration", "rel_ioi", "is_top_voice",
    "position_in_chord", "num_in_chord", "staff", "is_downbeat"};
// class counts per feature, in column order
inline constexpr int kScoreClassCounts[kScoreFeatureCount] = {88, 11, 11, 2, 11, 11, 2, 2};

// column value -> zero-based class index for embedding lookup
inline int score_class_index(int column, int value) {
    switch (column) {
        case 0: return value - 21;
        case 1: case 2: case 4: case 5: return value - 1;
        default: return value;
    }
}

struct PieceFeatures {
    std::string piece_id;
    PerformanceFeatures perf;
    ScoreFeatures score;
    ChordPartition partition;
    Mat k;  // C x 3 chordwise = N2C(x)

    int note_count() const { return static_cast<int>(perf.x.rows()); }
    int chord_count() const { return partition.chord_count(); }
};

// Chord window over a piece's features. chord/note ranges are half-open.
struct Excerpt {
    std::string piece_id;
    int index = 0;
    int chord_begin = 0, chord_end = 0;
    int note_begin = 0, note_end = 0;

    int chord_count() const { return chord_end - chord_begin; }
    int note_count() const { return note_end - note_begin; }
};

inline void validate_piece(const AlignedPiece& piece) {
    if (piece.score.empty()) throw DataError("empty piece");
    if (piece.score.size() != piece.perf.size())
        throw DataError("score/perf length mismatch in piece " + piece.piece_id);
    for (size_t i = 0; i < piece.score.size(); ++i) {
        const auto& s = piece.score[i];
        if (s.pitch < 21 || s.pitch > 108)
            throw DataError("pitch out of range [21,108] in piece " + piece.piece_id);
        if (s.dur_16ths <= 0) throw DataError("non-positive duration in piece " + piece.piece_id);
        if (s.onset_16ths < 0) throw DataError("negative onset in piece " + piece.piece_id);
        if (piece.perf[i].dur_s <= 0.0)
            throw DataError("non-positive performed duration in piece " + piece.piece_id);
    }
}

// deterministic canonical order: (score onset, pitch), stable
inline void sort_piece(AlignedPiece& piece) {
    std::vector<int> order(piece.score.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (piece.score[a].onset_16ths != piece.score[b].onset_16ths)
            return piece.score[a].onset_16ths < piece.score[b].onset_16ths;
        return piece.score[a].pitch < piece.score[b].pitch;
    });
    std::vector<ScoreNote> s2(piece.score.size());
    std::vector<PerfNote> p2(piece.perf.size());
    for (size_t i = 0; i < order.size(); ++i) {
        s2[i] = piece.score[order[i]];
        p2[i] = piece.perf[order[i]];
        p2[i].score_index = static_cast<int>(i);
    }
    piece.score = std::move(s2);
    piece.perf = std::move(p2);
}

// ---- chord grouping ---------------------------------------------------------

inline ChordPartition group_chords(const std::vector<ScoreNote>& score) {
    if (score.empty()) throw DataError("empty piece");
    ChordPartition p;
    for (int i = 0; i < static_cast<int>(score.size()); ++i) {
        if (i > 0 && score[i].onset_16ths < score[i - 1].onset_16ths)
            throw DataError("score not sorted by onset");
        if (i == 0 || score[i].onset_16ths != score[i - 1].onset_16ths)
            p.groups.emplace_back();
        p.groups.back().push_back(i);
    }
    return p;
}

inline AlignmentMatrix build_alignment_matrix(const ChordPartition& p) {
    p.validate();
    return AlignmentMatrix{p};
}

// ---- performance features ----------------------------------------------------

inline double clip(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

namespace detail {
inline std::vector<double> chord_mean_perf_onsets(const AlignedPiece& piece,
                                                  const ChordPartition& p) {
    std::vector<double> m(p.groups.size());
    for (size_t c = 0; c < p.groups.size(); ++c) {
        double s = 0.0;
        for (int n : p.groups[c]) s += piece.perf[n].onset_s;
        m[c] = s / static_cast<double>(p.groups[c].size());
    }
    return m;
}
}  // namespace detail

inline PerformanceFeatures extract_performance_features(const AlignedPiece& piece,
                                                        const ChordPartition& p) {
    const int n_notes = piece.note_count();
    PerformanceFeatures out;
    out.x = Mat::Zero(n_notes, 3);
    out.raw_x = Mat::Zero(n_notes, 3);

    const auto chord_of = p.note_to_chord();
    const auto mean_onset = detail::chord_mean_perf_onsets(piece, p);
    const int n_chords = p.chord_count();

    // raw clipped perf/score IOI ratios, needed again for the last chord's
    // articulation denominator
    std::vector<double> ioi_ratio(n_notes, 1.0);
    for (int n = 0; n < n_notes; ++n) {
        const int c = chord_of[n];
        if (c == 0) continue;  // first chord: ratio fixed to 1
        const double perf_ioi = piece.perf[n].onset_s - mean_onset[c - 1];
        const double score_ioi =
            (piece.score[p.groups[c][0]].onset_16ths - piece.score[p.groups[c - 1][0]].onset_16ths) *
            kSecondsPer16th;
        ioi_ratio[n] = clip(perf_ioi / score_ioi, kIoiClipLow, kIoiClipHigh);
    }

    std::vector<double> chord_mean_ratio(n_chords, 1.0);
    for (int c = 0; c < n_chords; ++c) {
        double s = 0.0;
        for (int n : p.groups[c]) s += ioi_ratio[n];
        chord_mean_ratio[c] = s / static_cast<double>(p.groups[c].size());
    }

    for (int n = 0; n < n_notes; ++n) {
        const int c = chord_of[n];
        const auto& pn = piece.perf[n];

        double vel = pn.velocity;
        if (vel < kVelocityLow || vel > kVelocityHigh) {
            out.warnings.push_back("velocity " + std::to_string(vel) + " clipped at note " +
                                   std::to_string(n));
            vel = clip(vel, kVelocityLow, kVelocityHigh);
        }

        double next_ioi;
        if (c + 1 < n_chords) {
            next_ioi = mean_onset[c + 1] - pn.onset_s;
            if (next_ioi <= 0.0)
                out.warnings.push_back("non-positive next-chord IOI at note " + std::to_string(n) +
                                       "; articulation clipped at lower bound");
        } else {
            // last chord: score duration scaled by the chord's mean IOI ratio
            next_ioi = piece.score[n].dur_16ths * kSecondsPer16th * chord_mean_ratio[c];
        }
        const double art_ratio =
            next_ioi > 0.0 ? clip(pn.dur_s / next_ioi, kArtClipLow, kArtClipHigh) : kArtClipLow;

        out.raw_x(n, kDynamics) = vel;
        out.raw_x(n, kTempo) = std::log2(ioi_ratio[n]);
        out.raw_x(n, kArticulation) = std::log2(art_ratio);
        out.x(n, kDynamics) = (vel - kVelocityReference) / kVelocityScale;
        out.x(n, kTempo) = out.raw_x(n, kTempo) / kIoiLogScale;
        out.x(n, kArticulation) = out.raw_x(n, kArticulation) / kArtLogScale;
    }
    return out;
}

// ---- score features -----------------------------------------------------------

inline ScoreFeatures extract_score_features(const std::vector<ScoreNote>& score,
                                            const ChordPartition& p) {
    const int n_notes = static_cast<int>(score.size());
    ScoreFeatures out;
    out.y.resize(n_notes, kScoreFeatureCount);

    const auto chord_of = p.note_to_chord();
    const int n_chords = p.chord_count();

    // top voice: pitch maximal among all notes sounding at this note's onset
    std::vector<int> top(n_notes, 0);
    for (int n = 0; n < n_notes; ++n) {
        const int t = score[n].onset_16ths;
        int max_pitch = score[n].pitch;
        for (int m = 0; m < n_notes; ++m) {
            if (score[m].onset_16ths > t) break;  // sorted by onset
            if (score[m].onset_16ths <= t && t < score[m].onset_16ths + score[m].dur_16ths)
                max_pitch = std::max(max_pitch, score[m].pitch);
        }
        top[n] = score[n].pitch == max_pitch ? 1 : 0;
    }

    for (int c = 0; c < n_chords; ++c) {
        const auto& g = p.groups[c];
        const int rel_ioi =
            c == 0 ? 1
                   : static_cast<int>(clip(static_cast<double>(score[g[0]].onset_16ths -
                                                               score[p.groups[c - 1][0]].onset_16ths),
                                           1, 11));
        const int num_in_chord = static_cast<int>(clip(static_cast<double>(g.size()), 1, 11));
        for (size_t pos = 0; pos < g.size(); ++pos) {
            const int n = g[pos];
            out.y(n, 0) = score[n].pitch;
            out.y(n, 1) = static_cast<int>(clip(static_cast<double>(score[n].dur_16ths), 1, 11));
            out.y(n, 2) = rel_ioi;
            out.y(n, 3) = top[n];
            out.y(n, 4) = static_cast<int>(clip(static_cast<double>(pos + 1), 1, 11));
            out.y(n, 5) = num_in_chord;
            out.y(n, 6) = static_cast<int>(score[n].staff);
            out.y(n, 7) = score[n].measure_pos_16ths == 0 ? 1 : 0;
        }
    }
    return out;
}

inline PieceFeatures extract_features(const AlignedPiece& piece) {
    validate_piece(piece);
    PieceFeatures f;
    f.piece_id = piece.piece_id;
    f.partition = group_chords(piece.score);
    f.perf = extract_performance_features(piece, f.partition);
    f.score = extract_score_features(piece.score, f.partition);
    f.k = hier::n2c(f.perf.x, f.partition);
    return f;
}

// ---- excerpt slicing ----------------------------------------------------------

inline std::vector<Excerpt> slice_excerpts(const PieceFeatures& f, int max_chords = 16,
                                           int hop = 4, int min_notes = 16) {
    std::vector<Excerpt> out;
    const int n_chords = f.chord_count();
    std::vector<int> note_start(n_chords + 1, 0);
    for (int c = 0; c < n_chords; ++c)
        note_start[c + 1] = note_start[c] + static_cast<int>(f.partition.groups[c].size());

    auto emit = [&](int c0, int c1) {
        Excerpt e;
        e.piece_id = f.piece_id;
        e.chord_begin = c0;
        e.chord_end = c1;
        e.note_begin = note_start[c0];
        e.note_end = note_start[c1];
        if (e.note_count() >= min_notes) {
            e.index = static_cast<int>(out.size());
            out.push_back(e);
        }
    };

    if (n_chords < max_chords) {
        emit(0, n_chords);
        return out;
    }
    int last = 0;
    for (int s = 0; s + max_chords <= n_chords; s += hop) {
        emit(s, s + max_chords);
        last = s;
    }
    if (last + max_chords < n_chords) emit(last + hop, n_chords);  // trailing partial window
    return out;
}

// materialized views over an excerpt's chord window
inline Mat excerpt_x(const PieceFeatures& f, const Excerpt& e) {
    return f.perf.x.middleRows(e.note_begin, e.note_count());
}
inline Eigen::MatrixXi excerpt_y(const PieceFeatures& f, const Excerpt& e) {
    return f.score.y.middleRows(e.note_begin, e.note_count());
}
inline std::vector<int> excerpt_sizes(const PieceFeatures& f, const Excerpt& e) {
    std::vector<int> s;
    for (int c = e.chord_begin; c < e.chord_end; ++c)
        s.push_back(static_cast<int>(f.partition.groups[c].size()));
    return s;
}
inline Mat excerpt_k(const PieceFeatures& f, const Excerpt& e) {
    return f.k.middleRows(e.chord_begin, e.chord_count());
}

// ---- feature inversion ---------------------------------------------------------

struct InvertResult {
    std::vector<PerfNote> perf;
    std::vector<std::string> warnings;
};

// Reconstructs performed notes from normalized features. Exact inverse of
// extract_performance_features up to velocity quantization (disabled by
// default here; MIDI/JSONL emission rounds).
inline InvertResult invert_features(const Mat& x, const std::vector<ScoreNote>& score,
                                    const ChordPartition& p, bool quantize_velocity = false) {
    const int n_notes = static_cast<int>(score.size());
    if (x.rows() != n_notes || x.cols() != 3) throw DataError("invert_features: bad feature shape");
    InvertResult out;
    out.perf.resize(n_notes);
    const auto chord_of = p.note_to_chord();
    const int n_chords = p.chord_count();

    // onsets, sequential over chords
    std::vector<double> mean_onset(n_chords, 0.0);
    for (int c = 0; c < n_chords; ++c) {
        double acc = 0.0;
        for (int n : p.groups[c]) {
            double onset;
            if (c == 0) {
                onset = score[n].onset_16ths * kSecondsPer16th;
            } else {
                const double score_ioi =
                    (score[n].onset_16ths - score[p.groups[c - 1][0]].onset_16ths) * kSecondsPer16th;
                onset = mean_onset[c - 1] + std::exp2(kIoiLogScale * x(n, kTempo)) * score_ioi;
            }
            out.perf[n].onset_s = onset;
            acc += onset;
        }
        mean_onset[c] = acc / static_cast<double>(p.groups[c].size());
    }

    // last chord's mean raw IOI ratio, mirroring extraction
    double last_mean_ratio = 1.0;
    if (n_chords > 1) {
        double s = 0.0;
        for (int n : p.groups[n_chords - 1]) s += std::exp2(kIoiLogScale * x(n, kTempo));
        last_mean_ratio = s / static_cast<double>(p.groups[n_chords - 1].size());
    }

    for (int n = 0; n < n_notes; ++n) {
        const int c = chord_of[n];
        double next_ioi;
        if (c + 1 < n_chords)
            next_ioi = mean_onset[c + 1] - out.perf[n].onset_s;
        else
            next_ioi = score[n].dur_16ths * kSecondsPer16th * last_mean_ratio;
        double dur = std::exp2(kArtLogScale * x(n, kArticulation)) * next_ioi;
        if (dur <= 0.0) {
            out.warnings.push_back("non-positive reconstructed duration at note " +
                                   std::to_string(n) + "; clamped to 1 ms");
            dur = 1e-3;
        }
        out.perf[n].dur_s = dur;
        double vel = kVelocityScale * x(n, kDynamics) + kVelocityReference;
        if (quantize_velocity) vel = clip(std::round(vel), kVelocityLow, kVelocityHigh);
        out.perf[n].velocity = vel;
        out.perf[n].score_index = n;
    }
    return out;
}

// ---- JSON-lines note-pair format ------------------------------------------------

inline std::vector<AlignedPiece> read_jsonl(std::istream& in, bool allow_missing_perf = false) {
    std::vector<AlignedPiece> pieces;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw DataError("line " + std::to_string(line_no) + ": invalid JSON: " + e.what());
        }
        if (j.contains("piece_id")) {
            pieces.emplace_back();
            pieces.back().piece_id = j.at("piece_id").get<std::string>();
            continue;
        }
        if (pieces.empty()) throw DataError("line " + std::to_string(line_no) +
                                            ": note record before any piece header");
        try {
            const auto& sj = j.at("score");
            ScoreNote s;
            s.onset_16ths = sj.at("onset_16ths").get<int>();
            s.dur_16ths = sj.at("dur_16ths").get<int>();
            s.pitch = sj.at("pitch").get<int>();
            const auto staff = sj.at("staff").get<std::string>();
            if (staff != "G" && staff != "F")
                throw DataError("staff must be \"G\" or \"F\"");
            s.staff = staff == "G" ? Staff::G : Staff::F;
            s.meter_beats = sj.at("meter_beats").get<int>();
            s.measure_pos_16ths = sj.at("measure_pos_16ths").get<int>();

            PerfNote pn;
            if (j.contains("perf")) {
                const auto& pj = j.at("perf");
                pn.onset_s = pj.at("onset_s").get<double>();
                pn.dur_s = pj.at("dur_s").get<double>();
                pn.velocity = pj.at("vel").get<double>();
            } else if (allow_missing_perf) {
                pn.onset_s = s.onset_seconds();
                pn.dur_s = s.dur_seconds();
                pn.velocity = kVelocityReference;
            } else {
                throw DataError("missing perf record");
            }
            pieces.back().score.push_back(s);
            pieces.back().perf.push_back(pn);
        } catch (const DataError&) {
            throw;
        } catch (const std::exception& e) {
            throw DataError("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    for (auto& piece : pieces) {
        sort_piece(piece);
        validate_piece(piece);
    }
    return pieces;
}

inline std::vector<AlignedPiece> read_jsonl_file(const std::string& path,
                                                 bool allow_missing_perf = false) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    return read_jsonl(in, allow_missing_perf);
}

inline void write_jsonl(std::ostream& out, const std::vector<AlignedPiece>& pieces) {
    for (const auto& piece : pieces) {
        out << nlohmann::json{{"piece_id", piece.piece_id}}.dump() << "\n";
        for (size_t i = 0; i < piece.score.size(); ++i) {
            const auto& s = piece.score[i];
            const auto& pn = piece.perf[i];
            nlohmann::json j{
                {"score",
                 {{"onset_16ths", s.onset_16ths},
                  {"dur_16ths", s.dur_16ths},
                  {"pitch", s.pitch},
                  {"staff", s.staff == Staff::G ? "G" : "F"},
                  {"meter_beats", s.meter_beats},
                  {"measure_pos_16ths", s.measure_pos_16ths}}},
                {"perf",
                 {{"onset_s", pn.onset_s},
                  {"dur_s", pn.dur_s},
                  {"vel", static_cast<int>(clip(std::round(pn.velocity), kVelocityLow, kVelocityHigh))}}}};
            out << j.dump() << "\n";
        }
    }
}

inline void write_jsonl_file(const std::string& path, const std::vector<AlignedPiece>& pieces) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open " + path + " for writing");
    write_jsonl(out, pieces);
}

// ---- feature dump (CSV) ----------------------------------------------------------

inline void write_features_csv(std::ostream& out, const std::vector<PieceFeatures>& pieces) {
    out << "piece_id,note_idx,chord_idx,vel,ioi_ratio,articulation";
    for (const char* n : kScoreFeatureNames) out << "," << n;
    out << "\n";
    out.precision(17);
    for (const auto& f : pieces) {
        const auto chord_of = f.partition.note_to_chord();
        for (int n = 0; n < f.note_count(); ++n) {
            out << f.piece_id << "," << n << "," << chord_of[n] << "," << f.perf.x(n, 0) << ","
                << f.perf.x(n, 1) << "," << f.perf.x(n, 2);
            for (int c = 0; c < kScoreFeatureCount; ++c) out << "," << f.score.y(n, c);
            out << "\n";
        }
    }
}

}  // namespace xsketch::notedata
