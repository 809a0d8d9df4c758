#include "tte/csv.hpp"

#include "tte/error.hpp"

namespace tte::csv {

Reader::Reader(std::istream& in, char delimiter) : in_(in), delim_(delimiter) {}

bool Reader::next(Record& record) {
    record.fields.clear();
    while (true) {
        int c = in_.peek();
        if (c == std::char_traits<char>::eof()) {
            return false;
        }
        if (c == '\n') {
            in_.get();
            ++line_;
            continue;
        }
        if (c == '\r') {
            in_.get();
            continue;
        }
        break;
    }

    record.line = line_;
    std::string field;
    bool quoted = false;
    bool was_quoted = false;
    while (true) {
        int c = in_.get();
        if (c == std::char_traits<char>::eof()) {
            if (quoted) {
                throw StructuralError("unterminated quoted field starting on line " +
                                      std::to_string(record.line));
            }
            record.fields.push_back(std::move(field));
            return true;
        }
        char ch = static_cast<char>(c);
        if (quoted) {
            if (ch == '"') {
                if (in_.peek() == '"') {
                    in_.get();
                    field.push_back('"');
                } else {
                    quoted = false;
                }
            } else {
                if (ch == '\n') {
                    ++line_;
                }
                field.push_back(ch);
            }
            continue;
        }
        if (ch == '"' && field.empty() && !was_quoted) {
            quoted = true;
            was_quoted = true;
        } else if (ch == delim_) {
            record.fields.push_back(std::move(field));
            field.clear();
            was_quoted = false;
        } else if (ch == '\r' && in_.peek() == '\n') {
            // CRLF: the LF ends the record on the next iteration
        } else if (ch == '\n') {
            ++line_;
            record.fields.push_back(std::move(field));
            return true;
        } else {
            field.push_back(ch);
        }
    }
}

std::string escape(std::string_view field, char delimiter) {
    bool needs = field.find_first_of(std::string{delimiter, '"', '\n', '\r'}) != std::string_view::npos;
    if (!needs) {
        return std::string(field);
    }
    std::string out = "\"";
    for (char ch : field) {
        if (ch == '"') {
            out.push_back('"');
        }
        out.push_back(ch);
    }
    out.push_back('"');
    return out;
}

std::string join(const std::vector<std::string>& fields, char delimiter) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i > 0) {
            out.push_back(delimiter);
        }
        out += escape(fields[i], delimiter);
    }
    return out;
}

}  // namespace tte::csv
