"""Triangle meshes, ray casting and surface sampling."""
