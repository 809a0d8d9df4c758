#pragma once

#include <istream>
#include <string>
#include <string_view>
#include <vector>

namespace tte::csv {

struct Record {
    std::vector<std::string> fields;
    std::size_t line = 0;  // 1-based line where the record starts
};

// RFC 4180 reader: quoted fields may contain the delimiter, doubled quotes and
// newlines. Accepts LF and CRLF line endings. Blank lines are skipped.
class Reader {
public:
    Reader(std::istream& in, char delimiter);

    bool next(Record& record);

private:
    std::istream& in_;
    char delim_;
    std::size_t line_ = 1;
};

// Quotes a field only when it contains the delimiter, a quote or a line break.
std::string escape(std::string_view field, char delimiter);

std::string join(const std::vector<std::string>& fields, char delimiter);

}  // namespace tte::csv
