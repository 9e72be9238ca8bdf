"""Grid experiments, reports and the escaping-efficiency comparison."""
