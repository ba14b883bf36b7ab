#include "commands.hpp"

int main(int argc, char** argv) { return tpb::app::run_cli(argc, argv); }
