#include "tkgr/tkg.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace tkgr {

namespace {

// Days since 1970-01-01 for a proleptic Gregorian date.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
    y -= m <= 2;
    std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    std::int64_t yoe = y - era * 400;
    std::int64_t doy = (153 * (static_cast<std::int64_t>(m) + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    std::int64_t doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + doe - 719468;
}

void civil_from_days(std::int64_t z, std::int64_t& y, unsigned& m, unsigned& d) {
    z += 719468;
    std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    std::int64_t doe = z - era * 146097;
    std::int64_t yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    std::int64_t doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    std::int64_t mp = (5 * doy + 2) / 153;
    d = static_cast<unsigned>(doy - (153 * mp + 2) / 5 + 1);
    m = static_cast<unsigned>(mp + (mp < 10 ? 3 : -9));
    y = yoe + era * 400 + (m <= 2 ? 1 : 0);
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = line.find('\t', start);
        if (pos == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    if (!fields.empty()) {
        // strip trailing CR from windows-style files
        auto& last = fields.back();
        if (!last.empty() && last.back() == '\r') last.pop_back();
    }
    return fields;
}

constexpr const char* kInversePrefix = "inverse of ";

}  // namespace

std::int32_t Vocab::intern(const std::string& label) {
    auto it = index_.find(label);
    if (it != index_.end()) return it->second;
    auto id = static_cast<std::int32_t>(labels_.size());
    labels_.push_back(label);
    index_.emplace(label, id);
    return id;
}

std::optional<std::int32_t> Vocab::find(const std::string& label) const {
    auto it = index_.find(label);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::string label_type_suffix(const std::string& label) {
    std::size_t end = label.find_last_not_of(' ');
    if (end == std::string::npos || label[end] != ')') return {};
    std::size_t open = label.rfind('(', end);
    if (open == std::string::npos || open + 1 >= end) return {};
    return label.substr(open + 1, end - open - 1);
}

std::string TemporalKnowledgeGraph::relation_label(RelationId r) const {
    auto base = static_cast<RelationId>(base_relations_);
    if (r < base) return relations_.label(r);
    return kInversePrefix + relations_.label(r - base);
}

std::optional<EntityId> TemporalKnowledgeGraph::find_entity(const std::string& label) const {
    return entities_.find(label);
}

std::optional<RelationId> TemporalKnowledgeGraph::find_relation(const std::string& label) const {
    if (auto id = relations_.find(label)) return *id;
    const std::string prefix(kInversePrefix);
    if (label.rfind(prefix, 0) == 0) {
        if (auto base = relations_.find(label.substr(prefix.size())))
            return *base + static_cast<RelationId>(base_relations_);
    }
    return std::nullopt;
}

std::vector<Edge> TemporalKnowledgeGraph::neighbors_before(EntityId entity, TimeId t,
                                                           std::optional<TimeId> window) const {
    std::vector<Edge> result;
    const auto& adj = adjacency_.at(static_cast<std::size_t>(entity));
    auto first_at_or_after = std::lower_bound(
        adj.begin(), adj.end(), t, [](const Edge& e, TimeId v) { return e.time < v; });
    TimeId oldest = window ? t - *window : std::numeric_limits<TimeId>::min();
    for (auto it = adj.begin(); it != first_at_or_after; ++it) {
        if (it->time >= oldest) result.push_back(*it);
    }
    std::reverse(result.begin(), result.end());  // newest first
    return result;
}

bool TemporalKnowledgeGraph::has_fact(EntityId s, RelationId r, EntityId o, TimeId t) const {
    const auto& adj = adjacency_.at(static_cast<std::size_t>(s));
    auto lo = std::lower_bound(adj.begin(), adj.end(), t,
                               [](const Edge& e, TimeId v) { return e.time < v; });
    for (auto it = lo; it != adj.end() && it->time == t; ++it)
        if (it->relation == r && it->object == o) return true;
    return false;
}

std::vector<EntityId> TemporalKnowledgeGraph::objects_at(EntityId s, RelationId r, TimeId t) const {
    std::vector<EntityId> result;
    const auto& adj = adjacency_.at(static_cast<std::size_t>(s));
    auto lo = std::lower_bound(adj.begin(), adj.end(), t,
                               [](const Edge& e, TimeId v) { return e.time < v; });
    for (auto it = lo; it != adj.end() && it->time == t; ++it)
        if (it->relation == r) result.push_back(it->object);
    return result;
}

GraphStats TemporalKnowledgeGraph::stats() const {
    GraphStats s;
    s.entities = entities_.size();
    s.base_relations = base_relations_;
    s.relations = 2 * base_relations_;
    s.train = train_.size();
    s.valid = valid_.size();
    s.test = test_.size();
    s.time_points = time_labels_.size();
    return s;
}

void TemporalKnowledgeGraph::write_split(std::ostream& out,
                                         const std::vector<Quadruple>& split) const {
    for (const auto& q : split) {
        out << entity_label(q.subject) << '\t' << relations_.label(q.relation) << '\t'
            << entity_label(q.object) << '\t' << time_label(q.time) << '\n';
    }
}

void TemporalKnowledgeGraph::dump_vocab(std::ostream& entities_out, std::ostream& relations_out,
                                        std::ostream& times_out) const {
    for (std::size_t i = 0; i < entities_.size(); ++i)
        entities_out << i << '\t' << entities_.label(static_cast<std::int32_t>(i)) << '\n';
    for (std::size_t i = 0; i < relation_count(); ++i)
        relations_out << i << '\t' << relation_label(static_cast<RelationId>(i)) << '\n';
    for (std::size_t i = 0; i < time_labels_.size(); ++i)
        times_out << i << '\t' << time_labels_[i] << '\n';
}

TimeId GraphBuilder::parse_time(const std::string& field, std::size_t line_number) const {
    if (options_.time_format == TimeFormat::IsoDate) {
        // YYYY-MM-DD
        if (field.size() < 8 || field.find('-') == std::string::npos)
            throw ParseError(line_number, "unparsable ISO date '" + field + "'");
        int y = 0;
        unsigned m = 0, d = 0;
        char dash1 = 0, dash2 = 0;
        std::istringstream ss(field);
        ss >> y >> dash1 >> m >> dash2 >> d;
        if (!ss || dash1 != '-' || dash2 != '-' || m < 1 || m > 12 || d < 1 || d > 31)
            throw ParseError(line_number, "unparsable ISO date '" + field + "'");
        return days_from_civil(y, m, d);
    }
    TimeId value = 0;
    auto res = std::from_chars(field.data(), field.data() + field.size(), value);
    if (res.ec != std::errc{} || res.ptr != field.data() + field.size())
        throw ParseError(line_number, "unparsable time '" + field + "'");
    return value;
}

Quadruple GraphBuilder::parse_line(const std::string& line, std::size_t line_number) {
    if (finalized_) throw LoadError("graph already finalized");
    auto fields = split_tabs(line);
    if (fields.size() < 4)
        throw ParseError(line_number, "field count " + std::to_string(fields.size()) + " < 4");
    Quadruple q;
    q.subject = graph_.entities_.intern(fields[0]);
    q.relation = graph_.relations_.intern(fields[1]);
    q.object = graph_.entities_.intern(fields[2]);
    q.time = parse_time(fields[3], line_number);
    auto it = raw_time_labels_.find(q.time);
    if (it == raw_time_labels_.end()) raw_time_labels_.emplace(q.time, fields[3]);
    return q;
}

void GraphBuilder::add_split(std::istream& in, const std::string& split_name) {
    if (split_name == "train")
        current_split_ = &graph_.train_;
    else if (split_name == "valid")
        current_split_ = &graph_.valid_;
    else if (split_name == "test")
        current_split_ = &graph_.test_;
    else
        throw LoadError("unknown split '" + split_name + "'");
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty() || line == "\r") continue;
        current_split_->push_back(parse_line(line, line_number));
    }
}

void GraphBuilder::finalize() {
    if (finalized_) return;
    finalized_ = true;
    auto& g = graph_;

    if (!options_.allow_empty_split) {
        if (g.train_.empty()) throw LoadError("train split is empty");
        if (g.valid_.empty()) throw LoadError("valid split is empty");
        if (g.test_.empty()) throw LoadError("test split is empty");
    }

    // Normalize raw times to 0-based day indices: shift to the minimum and
    // divide by the common stride (hour-granular dumps use multiples of 24).
    TimeId min_time = std::numeric_limits<TimeId>::max();
    TimeId stride = 0;
    auto scan = [&](const std::vector<Quadruple>& split) {
        for (const auto& q : split) min_time = std::min(min_time, q.time);
    };
    scan(g.train_);
    scan(g.valid_);
    scan(g.test_);
    if (min_time == std::numeric_limits<TimeId>::max()) min_time = 0;
    auto gcd_scan = [&](const std::vector<Quadruple>& split) {
        for (const auto& q : split) stride = std::gcd(stride, q.time - min_time);
    };
    gcd_scan(g.train_);
    gcd_scan(g.valid_);
    gcd_scan(g.test_);
    if (stride == 0) stride = 1;

    TimeId max_index = 0;
    auto remap = [&](std::vector<Quadruple>& split) {
        for (auto& q : split) {
            q.time = (q.time - min_time) / stride;
            max_index = std::max(max_index, q.time);
        }
    };
    remap(g.train_);
    remap(g.valid_);
    remap(g.test_);

    g.time_labels_.resize(static_cast<std::size_t>(max_index) + 1);
    for (TimeId i = 0; i <= max_index; ++i) {
        TimeId raw = min_time + i * stride;
        auto it = raw_time_labels_.find(raw);
        if (it != raw_time_labels_.end()) {
            g.time_labels_[static_cast<std::size_t>(i)] = it->second;
        } else if (options_.time_format == TimeFormat::IsoDate) {
            std::int64_t y;
            unsigned m, d;
            civil_from_days(raw, y, m, d);
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%04lld-%02u-%02u", static_cast<long long>(y), m, d);
            g.time_labels_[static_cast<std::size_t>(i)] = buf;
        } else {
            g.time_labels_[static_cast<std::size_t>(i)] = std::to_string(raw);
        }
    }

    // Chronological split order.
    auto max_of = [](const std::vector<Quadruple>& s) {
        TimeId m = std::numeric_limits<TimeId>::min();
        for (const auto& q : s) m = std::max(m, q.time);
        return m;
    };
    auto min_of = [](const std::vector<Quadruple>& s) {
        TimeId m = std::numeric_limits<TimeId>::max();
        for (const auto& q : s) m = std::min(m, q.time);
        return m;
    };
    auto check_order = [&](const std::vector<Quadruple>& earlier,
                           const std::vector<Quadruple>& later, const char* a, const char* b) {
        if (earlier.empty() || later.empty()) return;
        TimeId hi = max_of(earlier), lo = min_of(later);
        if (hi >= lo)
            throw LoadError(std::string("split order violated: max ") + a + " time " +
                            g.time_labels_[static_cast<std::size_t>(hi)] + " >= min " + b +
                            " time " + g.time_labels_[static_cast<std::size_t>(lo)]);
    };
    check_order(g.train_, g.valid_, "train", "valid");
    check_order(g.valid_, g.test_, "valid", "test");
    check_order(g.train_, g.test_, "train", "test");

    g.base_relations_ = g.relations_.size();

    // Entity types from label suffixes.
    g.entity_types_.assign(g.entities_.size(), -1);
    for (std::size_t e = 0; e < g.entities_.size(); ++e) {
        std::string suffix = label_type_suffix(g.entities_.label(static_cast<std::int32_t>(e)));
        if (suffix.empty()) continue;
        auto it = type_index_.find(suffix);
        std::int32_t type_id;
        if (it == type_index_.end()) {
            type_id = static_cast<std::int32_t>(g.type_labels_.size());
            g.type_labels_.push_back(suffix);
            type_index_.emplace(suffix, type_id);
        } else {
            type_id = it->second;
        }
        g.entity_types_[e] = type_id;
    }

    // Inverse-augmented adjacency, time-ascending per entity.
    g.adjacency_.assign(g.entities_.size(), {});
    std::uint32_t next_index = 0;
    auto base = static_cast<RelationId>(g.base_relations_);
    auto index_split = [&](const std::vector<Quadruple>& split) {
        for (const auto& q : split) {
            g.adjacency_[static_cast<std::size_t>(q.subject)].push_back(
                {q.relation, q.object, q.time, next_index++});
            g.adjacency_[static_cast<std::size_t>(q.object)].push_back(
                {q.relation + base, q.subject, q.time, next_index++});
        }
    };
    index_split(g.train_);
    index_split(g.valid_);
    index_split(g.test_);
    for (auto& adj : g.adjacency_) {
        std::sort(adj.begin(), adj.end(), [](const Edge& a, const Edge& b) {
            if (a.time != b.time) return a.time < b.time;
            return a.insertion_index < b.insertion_index;
        });
    }
}

TemporalKnowledgeGraph GraphBuilder::take() {
    finalize();
    return std::move(graph_);
}

TemporalKnowledgeGraph load_graph_streams(std::istream& train, std::istream& valid,
                                          std::istream& test, LoadOptions options) {
    GraphBuilder builder(options);
    builder.add_split(train, "train");
    builder.add_split(valid, "valid");
    builder.add_split(test, "test");
    return builder.take();
}

TemporalKnowledgeGraph load_graph(const std::string& train_path, const std::string& valid_path,
                                  const std::string& test_path, LoadOptions options) {
    auto open = [](const std::string& path) {
        std::ifstream f(path);
        if (!f) throw LoadError("cannot open " + path);
        return f;
    };
    auto train = open(train_path);
    auto valid = open(valid_path);
    auto test = open(test_path);
    return load_graph_streams(train, valid, test, options);
}

}  // namespace tkgr
