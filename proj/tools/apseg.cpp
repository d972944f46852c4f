#include "apseg/commands.hpp"

int main(int argc, char** argv) { return apseg::run_cli(argc, argv); }
