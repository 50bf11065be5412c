#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace stmoe {

constexpr int kSlotsPerDay = 48;
constexpr int kTotalDays = 75;
constexpr int kTrainDays = 60;

/// One square of the G×G city partition, 0-based.
struct GridCell {
    int x = 0;
    int y = 0;
    friend bool operator==(GridCell a, GridCell b) { return a.x == b.x && a.y == b.y; }
    friend bool operator!=(GridCell a, GridCell b) { return !(a == b); }
};

// Reserved token ids appended after the G*G real location classes.
inline int pad_id(int G) { return G * G; }
inline int mask_id(int G) { return G * G + 1; }
inline int cls_id(int G) { return G * G + 2; }
inline int location_vocab(int G) { return G * G + 3; }

inline int cell_to_class(GridCell c, int G) {
    if (c.x < 0 || c.x >= G || c.y < 0 || c.y >= G) {
        throw std::out_of_range("cell_to_class: cell (" + std::to_string(c.x) + "," +
                                std::to_string(c.y) + ") outside " + std::to_string(G) + "x" +
                                std::to_string(G) + " grid");
    }
    return c.x * G + c.y;
}

inline GridCell class_to_cell(int id, int G) {
    if (id < 0 || id >= G * G) {
        throw std::out_of_range("class_to_cell: id " + std::to_string(id) +
                                " is not a real location class");
    }
    return GridCell{id / G, id % G};
}

inline double cell_distance(GridCell a, GridCell b) {
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    return std::sqrt(dx * dx + dy * dy);
}

inline int day_of_week(int day) { return day % 7; }        // day 0 is a Monday
inline bool is_weekend(int day) { return day % 7 >= 5; }

}  // namespace stmoe
